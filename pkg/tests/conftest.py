import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from workrank.toy import load_toy  # noqa: E402


@pytest.fixture(scope="session")
def toy():
    return load_toy()
