"""Mini-batches over skill-centred bipartite graphs.

Each step draws ``n`` skills uniformly without replacement, then one positive
target per skill in every enabled graph. Positives are recorded for every
edge among the drawn nodes, not just the sampled pairs, so a job shared by
two skills in the batch is never a negative for either of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import BipartiteGraph, validate_graph


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class GraphBatch:
    target_ids: tuple[str, ...]
    target_texts: tuple[str, ...]
    positives: np.ndarray  # (n, n) bool; [i, i] is the sampled pair


@dataclass(frozen=True)
class MiniBatch:
    skill_ids: tuple[str, ...]
    skill_texts: tuple[str, ...]
    graphs: dict[str, GraphBatch]

    def __len__(self):
        return len(self.skill_ids)


def _skill_space(graphs: dict[str, BipartiteGraph]):
    spaces = {id(g.query_space) for g in graphs.values()}
    first = next(iter(graphs.values())).query_space
    if len(spaces) > 1 and any(g.query_space.ids != first.ids for g in graphs.values()):
        raise SamplingError("graphs must share one query (skill) space")
    return first


def eligible_skills(graphs: dict[str, BipartiteGraph], enabled=None) -> list[str]:
    """Skills with at least one edge in every enabled graph, in space order."""
    enabled = list(graphs) if enabled is None else list(enabled)
    space = _skill_space(graphs)
    return [s for s in space.ids if all(graphs[g].targets_of(s) for g in enabled)]


def steps_per_epoch(graphs: dict[str, BipartiteGraph], n: int) -> int:
    return math.ceil(max(len(g) for g in graphs.values()) / n)


def augment_vacancy(sentence: str, pool, p: float, rng: np.random.Generator) -> str:
    """With probability ``p`` glue a random pool sentence before or after ``sentence``."""
    if p > 0 and len(pool) == 0:
        raise SamplingError("augmentation pool is empty")
    if p <= 0 or rng.random() >= p:
        return sentence
    extra = pool[rng.integers(len(pool))]
    return f"{extra} {sentence}" if rng.random() < 0.5 else f"{sentence} {extra}"


class BatchSampler:
    """Deterministic batch source: batch ``step`` depends only on ``(seed, step)``."""

    def __init__(self, graphs: dict[str, BipartiteGraph], n: int, seed: int, enabled=None,
                 augment_graph: str | None = "vacancy", augment_p: float = 0.0):
        if not graphs:
            raise SamplingError("no graphs given")
        self.graphs = dict(graphs)
        self.enabled = list(self.graphs) if enabled is None else [g for g in enabled if g in self.graphs]
        missing = [g for g in (enabled or []) if g not in self.graphs]
        if missing:
            raise SamplingError(f"enabled graphs not provided: {missing}")
        for name, g in self.graphs.items():
            report = validate_graph(g)
            if not report.structurally_valid:
                raise SamplingError(f"graph {name!r} failed validation: {report.as_dict()}")
        self.space = _skill_space(self.graphs)
        self.eligible = eligible_skills(self.graphs, self.enabled)
        if n > len(self.eligible):
            raise SamplingError(f"batch size {n} exceeds the {len(self.eligible)} eligible skills")
        if n < 1:
            raise SamplingError("batch size must be positive")
        self.n = n
        self.seed = seed
        self.augment_graph = augment_graph if augment_graph in self.enabled else None
        self.augment_p = augment_p

    def rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, step])

    def sample(self, step: int) -> MiniBatch:
        rng = self.rng(step)
        picks = rng.choice(len(self.eligible), size=self.n, replace=False)
        skills = [self.eligible[i] for i in picks]
        in_batch = set(skills)
        out = {}
        for name in self.enabled:
            g = self.graphs[name]
            targets = []
            for s in skills:
                ys = g.targets_of(s)
                targets.append(ys[rng.integers(len(ys))])
            pos = np.array([[g.has_edge(s, t) for t in targets] for s in skills], dtype=bool)
            texts = [g.target_space.text(t) for t in targets]
            if name == self.augment_graph and self.augment_p > 0:
                pool = [g.target_space.text(t) for t in g.target_space.ids
                        if not any(q in in_batch for q in g.queries_of(t))]
                texts = [augment_vacancy(t, pool, self.augment_p, rng) for t in texts]
            out[name] = GraphBatch(tuple(targets), tuple(texts), pos)
        return MiniBatch(tuple(skills), tuple(self.space.text(s) for s in skills), out)


def sample_batch(graphs: dict[str, BipartiteGraph], n: int, seed: int, step: int, enabled=None,
                 augment_p: float = 0.0) -> MiniBatch:
    return BatchSampler(graphs, n, seed, enabled, augment_p=augment_p).sample(step)
