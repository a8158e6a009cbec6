"""Hashed-vocabulary token encoder.

Every text becomes an ``n x h`` matrix of token embeddings. The reference
encoder is a table lookup followed by an optional affine map, which keeps
gradients hand-derivable. Any other backbone plugs in by exporting its token
matrices to a cache file (see :mod:`workrank.ranker`).
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_VOCAB = 1 << 15
EMPTY_ID = 0
TRAIN_MAX_TOKENS = 64

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

PARAMS_MAGIC = b"UWEP"
PARAMS_VERSION = 1


class EncoderError(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    truncated: bool = False

    def __len__(self):
        return len(self.tokens)


def token_id(token: str, vocab_size: int = DEFAULT_VOCAB) -> int:
    """Hash a token into ``[1, vocab_size)``; id 0 stays reserved for empty text."""
    if vocab_size < 2:
        return EMPTY_ID
    return 1 + fnv1a_64(token.encode("utf-8")) % (vocab_size - 1)


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, max_tokens: int | None = None, vocab_size: int = DEFAULT_VOCAB) -> TokenSequence:
    words = split_words(text)
    if not words:
        return TokenSequence((EMPTY_ID,), False)
    truncated = max_tokens is not None and len(words) > max_tokens
    if truncated:
        words = words[:max_tokens]
    return TokenSequence(tuple(token_id(w, vocab_size) for w in words), truncated)


@dataclass
class EncoderParams:
    table: np.ndarray                    # (vocab_size, h)
    weight: np.ndarray | None = None     # (h, h); row i of the output is weight @ x + bias
    bias: np.ndarray | None = None       # (h,)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def with_projection(self) -> bool:
        return self.weight is not None

    def blocks(self) -> dict[str, np.ndarray]:
        out = {"table": self.table}
        if self.weight is not None:
            out["weight"] = self.weight
            out["bias"] = self.bias
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.table.copy(),
            None if self.weight is None else self.weight.copy(),
            None if self.bias is None else self.bias.copy(),
        )

    def check(self) -> None:
        h = self.dim
        if (self.weight is None) != (self.bias is None):
            raise EncoderError("projection weight and bias must be given together")
        if self.weight is not None and (self.weight.shape != (h, h) or self.bias.shape != (h,)):
            raise EncoderError(f"projection shapes {self.weight.shape}, {self.bias.shape} do not match dim {h}")
        for name, block in self.blocks().items():
            if not np.all(np.isfinite(block)):
                raise EncoderError(f"non-finite entries in {name}")


def init_params(seed: int, vocab_size: int = DEFAULT_VOCAB, h: int = 32,
                with_projection: bool = False) -> EncoderParams:
    """Gaussian table with variance ``1/h``; projection starts at the identity."""
    if vocab_size < 1 or h < 1:
        raise EncoderError(f"invalid dims vocab_size={vocab_size}, h={h}")
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 1.0 / np.sqrt(h), size=(vocab_size, h))
    if with_projection:
        return EncoderParams(table, np.eye(h), np.zeros(h))
    return EncoderParams(table)


def encode(params: EncoderParams, tokens: TokenSequence | Sequence[int]) -> np.ndarray:
    ids = np.asarray(getattr(tokens, "tokens", tokens), dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= params.vocab_size):
        raise EncoderError(f"token id out of range for vocab_size={params.vocab_size}")
    x = params.table[ids]
    if params.weight is not None:
        x = x @ params.weight.T + params.bias
    return x


def encode_text(params: EncoderParams, text: str, max_tokens: int | None = None) -> np.ndarray:
    return encode(params, tokenize(text, max_tokens, params.vocab_size))


def encode_backward(params: EncoderParams, ids: np.ndarray, d_out: np.ndarray,
                    grads: dict[str, np.ndarray]) -> None:
    """Accumulate parameter gradients for one :func:`encode` call into ``grads``."""
    if params.weight is not None:
        x = params.table[ids]
        grads["weight"] += d_out.T @ x
        grads["bias"] += d_out.sum(axis=0)
        d_out = d_out @ params.weight
    np.add.at(grads["table"], ids, d_out)


def save_params(params: EncoderParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<IIIB", PARAMS_VERSION, params.vocab_size, params.dim,
                             int(params.with_projection)))
        fh.write(np.ascontiguousarray(params.table, dtype="<f4").tobytes())
        if params.with_projection:
            fh.write(np.ascontiguousarray(params.weight, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(params.bias, dtype="<f4").tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PARAMS_MAGIC:
        raise EncoderError(f"{path}: not a parameter checkpoint (bad magic)")
    version, vocab, h, proj = struct.unpack_from("<IIIB", data, 4)
    if version != PARAMS_VERSION:
        raise EncoderError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<IIIB")
    n_expected = vocab * h + (h * h + h if proj else 0)
    values = np.frombuffer(data, dtype="<f4", offset=offset)
    if values.size != n_expected:
        raise EncoderError(f"{path}: expected {n_expected} floats, found {values.size}")
    values = values.astype(np.float64)
    table = values[: vocab * h].reshape(vocab, h)
    if not proj:
        return EncoderParams(table.copy())
    w = values[vocab * h: vocab * h + h * h].reshape(h, h)
    b = values[vocab * h + h * h:]
    return EncoderParams(table.copy(), w.copy(), b.copy())
