"""Four ways to score a query against a target, on tiny hand-made token matrices."""

import numpy as np

from workrank.interaction import (maxsim_breakdown, sim_maxsim, sim_mean_cosine, sim_softmax,
                                  sim_softmax_ymean, softmax_breakdown)

# one query token pointing along x, two target tokens: one aligned, one orthogonal
e_q = np.array([[1.0, 0.0]])
e_y = np.array([[1.0, 0.0], [0.0, 1.0]])

b = softmax_breakdown(e_q, e_y, tau=1.0)
print("raw similarities S      ", b.raw)
print("cosine similarities S^  ", b.normalized)
print("interaction A (tau=1)   ", b.interaction.round(4))
print("softmax_token score     ", round(b.score, 4))  # e/(e+1) = 0.7311

# the softmax sharpens into a hard pick as tau shrinks
for tau in (1.0, 0.1, 0.01, 1e-6):
    print(f"tau={tau:<6} score={sim_softmax(e_q, e_y, tau):.6f}")
print("maxsim                  ", sim_maxsim(e_q, e_y))

# attention follows the raw dot product, the value read is the cosine
e_q = np.array([[1.0, 0.2]])
e_y = np.array([[1.0, 0.0], [5.0, 5.0]])
b = softmax_breakdown(e_q, e_y, tau=0.01)
print("\nlong target token wins attention:", b.interaction.round(3), "score", round(b.score, 4))
print("maxsim picks the same token:     ", maxsim_breakdown(e_q, e_y).interaction)

# pooled baselines
rng = np.random.default_rng(0)
q, y = rng.normal(size=(3, 8)), rng.normal(size=(5, 8))
print("\nrandom 3x8 vs 5x8 token matrices")
print("softmax_token", round(sim_softmax(q, y, 0.5), 4))
print("maxsim       ", round(sim_maxsim(q, y), 4))
print("mean_cosine  ", round(sim_mean_cosine(q, y), 4))
print("softmax_ymean", round(sim_softmax_ymean(q, y, 0.5), 4))
