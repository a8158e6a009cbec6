"""Contrastive losses over batch similarity matrices, with exact gradients.

All losses take a :class:`BatchSimilarityMatrix`: scores ``M[i, j]`` between
batch queries and batch targets, a boolean positive mask, and a temperature.

``infonce``         one positive per row, on the diagonal.
``mtm_asymmetric``  per-query mean of ``-log softmax`` over every positive,
                    then mean over queries.
``mtm_symmetric``   asymmetric loss in both directions, summed.
``mtm_pairwise``    every edge is an independent pair scored in both
                    directions; mean over edges.
``mtm_total``       weighted sum of per-graph losses.

:func:`loss_gradients` runs tokenize -> encode -> score -> loss on a
:class:`~workrank.sampler.MiniBatch` and backpropagates to the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .encoder import EncoderParams, tokenize
from .interaction import InteractionConfig, InteractionError, batch_scores, batch_scores_backward

GRAPHS = ("job", "vacancy", "alternative")
DEFAULT_TAUS = {"job": 0.05, "vacancy": 0.02, "alternative": 0.02}


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    job: float = 1.0
    vacancy: float = 0.5
    alternative: float = 0.5

    def __post_init__(self):
        vals = self.as_dict().values()
        if any(w < 0 for w in vals):
            raise LossError(f"loss weights must be non-negative: {self}")
        if not any(w > 0 for w in vals):
            raise LossError("at least one loss weight must be positive")

    def as_dict(self) -> dict[str, float]:
        return {"job": self.job, "vacancy": self.vacancy, "alternative": self.alternative}

    def enabled(self) -> list[str]:
        return [g for g, w in self.as_dict().items() if w > 0]


@dataclass
class BatchSimilarityMatrix:
    values: np.ndarray
    tau: float
    positives: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.positives.shape:
            raise LossError(f"values {self.values.shape} and positives {self.positives.shape} must be equal 2-D shapes")
        if not self.tau > 0:
            raise LossError(f"temperature must be positive, got {self.tau}")
        if not np.all(np.isfinite(self.values)):
            raise LossError("non-finite similarity values")

    @classmethod
    def from_edges(cls, values, tau, edges) -> "BatchSimilarityMatrix":
        values = np.asarray(values, dtype=np.float64)
        pos = np.zeros(values.shape, dtype=bool)
        for i, j in edges:
            pos[i, j] = True
        return cls(values, tau, pos)

    def transposed(self) -> "BatchSimilarityMatrix":
        return BatchSimilarityMatrix(self.values.T, self.tau, self.positives.T)


def _logsumexp_rows(x):
    mx = x.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True)))[:, 0]


def _softmax_rows(x):
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _directional(values, pos, tau):
    counts = pos.sum(axis=1)
    if np.any(counts == 0):
        raise LossError(f"rows without a positive: {np.flatnonzero(counts == 0).tolist()}")
    logits = values / tau
    per_row = _logsumexp_rows(logits) - (logits * pos).sum(axis=1) / counts
    n = values.shape[0]
    grad = (_softmax_rows(logits) - pos / counts[:, None]) / (tau * n)
    return float(per_row.mean()), grad


def infonce_grad(batch: BatchSimilarityMatrix):
    n_q, n_y = batch.values.shape
    if n_q != n_y:
        raise LossError(f"infonce needs a square matrix, got {batch.values.shape}")
    return _directional(batch.values, np.eye(n_q, dtype=bool), batch.tau)


def mtm_asymmetric_grad(batch: BatchSimilarityMatrix):
    return _directional(batch.values, batch.positives, batch.tau)


def mtm_symmetric_grad(batch: BatchSimilarityMatrix):
    fwd, g_fwd = _directional(batch.values, batch.positives, batch.tau)
    bwd, g_bwd = _directional(batch.values.T, batch.positives.T, batch.tau)
    return fwd + bwd, g_fwd + g_bwd.T


def mtm_pairwise_grad(batch: BatchSimilarityMatrix):
    pos, tau = batch.positives, batch.tau
    n_edges = int(pos.sum())
    if n_edges == 0:
        raise LossError("empty edge set")
    logits = batch.values / tau
    row_deg = pos.sum(axis=1)
    col_deg = pos.sum(axis=0)
    row_lse = _logsumexp_rows(logits)
    col_lse = _logsumexp_rows(logits.T)
    loss = ((row_lse * row_deg).sum() + (col_lse * col_deg).sum() - 2.0 * (logits * pos).sum()) / n_edges
    grad = (_softmax_rows(logits) * row_deg[:, None]
            + _softmax_rows(logits.T).T * col_deg[None, :]
            - 2.0 * pos) / (tau * n_edges)
    return float(loss), grad


LOSSES: dict[str, Callable] = {
    "infonce": infonce_grad,
    "mtm_asymmetric": mtm_asymmetric_grad,
    "mtm_symmetric": mtm_symmetric_grad,
    "mtm_pairwise": mtm_pairwise_grad,
}


def infonce(batch: BatchSimilarityMatrix) -> float:
    return infonce_grad(batch)[0]


def mtm_asymmetric(batch: BatchSimilarityMatrix) -> float:
    return mtm_asymmetric_grad(batch)[0]


def mtm_symmetric(batch: BatchSimilarityMatrix) -> float:
    return mtm_symmetric_grad(batch)[0]


def mtm_pairwise(batch: BatchSimilarityMatrix) -> float:
    return mtm_pairwise_grad(batch)[0]


def mtm_total(per_graph: dict[str, BatchSimilarityMatrix], weights: LossWeights = LossWeights(),
              loss: str = "mtm_symmetric") -> float:
    """Weighted sum over graphs; graphs with zero weight may be omitted."""
    fn = LOSSES[loss]
    total = 0.0
    for graph, w in weights.as_dict().items():
        if w > 0:
            if graph not in per_graph:
                raise LossError(f"missing batch for enabled graph {graph!r}")
            total += w * fn(per_graph[graph])[0]
    return total


# ---------------------------------------------------------------------------
# end-to-end gradients


@dataclass(frozen=True)
class LossConfig:
    loss: str = "mtm_symmetric"
    interaction: InteractionConfig = InteractionConfig()
    weights: LossWeights = LossWeights()
    taus: dict = field(default_factory=lambda: dict(DEFAULT_TAUS))
    max_tokens: int | None = 64

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise LossError(f"unknown loss {self.loss!r}, expected one of {sorted(LOSSES)}")
        if self.interaction.kind == "maxsim":
            raise LossError("maxsim cannot be trained through; use softmax_token, softmax_ymean or mean_cosine")
        for g in self.weights.enabled():
            if not self.taus.get(g, 0) > 0:
                raise LossError(f"missing or non-positive temperature for graph {g!r}")


@dataclass
class LossResult:
    total: float
    per_graph: dict[str, float]
    grads: dict[str, np.ndarray]


def _padded_ids(texts, max_tokens, vocab_size):
    seqs = [tokenize(t, max_tokens, vocab_size).tokens for t in texts]
    width = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def encode_padded(params: EncoderParams, ids, mask):
    x = params.table[ids]
    if params.weight is not None:
        x = x @ params.weight.T + params.bias
    return x * mask[..., None]


def _encode_backward_padded(params, ids, mask, d_out, grads):
    d_out = d_out * mask[..., None]
    if params.weight is not None:
        x = params.table[ids]
        grads["weight"] += np.einsum("nah,nak->hk", d_out, x)
        grads["bias"] += d_out.sum(axis=(0, 1))
        d_out = d_out @ params.weight
    np.add.at(grads["table"], ids[mask], d_out[mask])


def graph_similarity(params: EncoderParams, query_texts, target_texts, config: LossConfig):
    """Score matrix for one graph of a batch plus what the backward pass needs."""
    q_ids, q_mask = _padded_ids(query_texts, config.max_tokens, params.vocab_size)
    y_ids, y_mask = _padded_ids(target_texts, config.max_tokens, params.vocab_size)
    q = encode_padded(params, q_ids, q_mask)
    y = encode_padded(params, y_ids, y_mask)
    scores, ctx = batch_scores(q, q_mask, y, y_mask, config.interaction)
    return scores, (q_ids, q_mask, y_ids, y_mask, ctx)


def batch_loss(params: EncoderParams, batch, config: LossConfig, with_grad: bool = True) -> LossResult:
    """Loss (and parameter gradients) of ``config.loss`` summed over graphs with weights."""
    grads = {k: np.zeros_like(v) for k, v in params.blocks().items()} if with_grad else {}
    fn = LOSSES[config.loss]
    total = 0.0
    per_graph = {}
    weights = config.weights.as_dict()
    for graph in config.weights.enabled():
        gb = batch.graphs[graph]
        scores, (q_ids, q_mask, y_ids, y_mask, ctx) = graph_similarity(
            params, batch.skill_texts, gb.target_texts, config)
        positives = np.eye(len(batch.skill_texts), dtype=bool) if config.loss == "infonce" else gb.positives
        value, d_scores = fn(BatchSimilarityMatrix(scores, config.taus[graph], positives))
        per_graph[graph] = value
        total += weights[graph] * value
        if with_grad:
            dq, dy = batch_scores_backward(weights[graph] * d_scores, ctx)
            _encode_backward_padded(params, q_ids, q_mask, dq, grads)
            _encode_backward_padded(params, y_ids, y_mask, dy, grads)
    if not np.isfinite(total):
        raise LossError(f"non-finite loss {total}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise LossError(f"non-finite gradient in parameter block {name!r}")
    return LossResult(total, per_graph, grads)


def loss_gradients(params: EncoderParams, batch, config: LossConfig) -> dict[str, np.ndarray]:
    try:
        return batch_loss(params, batch, config).grads
    except InteractionError as exc:
        raise LossError(str(exc)) from None
