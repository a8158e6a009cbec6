"""Contrastive losses over a batch similarity matrix, and their gradients."""

import numpy as np

from workrank.contrastive import (BatchSimilarityMatrix, infonce, mtm_asymmetric, mtm_asymmetric_grad,
                                  mtm_pairwise, mtm_symmetric)

# diagonal positives: the many-to-many losses reduce to plain InfoNCE
sims = np.array([[1.0, 0.0], [0.0, 1.0]])
diag = BatchSimilarityMatrix(sims, 1.0, np.eye(2, dtype=bool))
print("infonce       ", round(infonce(diag), 4))          # log(1 + 1/e) = 0.3133
print("mtm_asymmetric", round(mtm_asymmetric(diag), 4))
print("mtm_symmetric ", round(mtm_symmetric(diag), 4), "= forward + backward")
print("mtm_pairwise  ", round(mtm_pairwise(diag), 4))

# one skill, two jobs, both positive: the row averages over its positives
one_two = BatchSimilarityMatrix(np.array([[1.0, 0.0]]), 1.0, np.ones((1, 2), dtype=bool))
print("\n1 query, 2 positives, asymmetric", round(mtm_asymmetric(one_two), 4))  # 0.8133
print("reverse direction (one candidate each)", mtm_asymmetric(one_two.transposed()))

# every node has two positives, in both directions
full = BatchSimilarityMatrix(sims, 1.0, np.ones((2, 2), dtype=bool))
print("2x2 all positive, symmetric", round(mtm_symmetric(full), 4))  # 1.6265

# the gradient with respect to the similarities: softmax minus 1/|P| on the positives
loss, grad = mtm_asymmetric_grad(one_two)
print("\ngradient on [[1, 0]] with both positive:", grad.round(4))
print("note the positive entry with a positive gradient: raising it would raise the loss")

# a shared target in a sampled batch puts two positives in one column
pos = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=bool)
rng = np.random.default_rng(1)
m = BatchSimilarityMatrix(rng.normal(size=(3, 3)), 0.05, pos)
print("\nshared-target batch, tau=0.05:", round(mtm_symmetric(m), 4))
