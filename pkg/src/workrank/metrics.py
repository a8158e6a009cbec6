"""Ranking metrics, task-group macro averaging and a latency bench."""

from __future__ import annotations

import json
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class TaskMetrics:
    task: str
    task_group: str
    map: float
    rp_at_10: float
    n_queries: int

    def as_dict(self) -> dict:
        return asdict(self)


def _ranked_ids(ranking) -> Sequence[str]:
    ids = getattr(ranking, "ranked_ids", None)
    return ids if ids is not None else ranking


def average_precision(ranking, relevant) -> float:
    """AP of a ranked list of target ids; ``ranking`` may be a RankedOutput."""
    relevant = set(relevant)
    if not relevant:
        raise MetricError("empty relevant set")
    hits = 0
    total = 0.0
    for k, tid in enumerate(_ranked_ids(ranking), start=1):
        if tid in relevant:
            hits += 1
            total += hits / k
            if hits == len(relevant):
                break
    return total / len(relevant)


def rp_at_k(ranking, relevant, k: int = 10, strict: bool = False) -> float:
    """Relevant hits in the top ``k`` over ``min(R, k)``.

    ``strict=True`` gives the alternative reading, hits over ``k``.
    """
    relevant = set(relevant)
    if not relevant:
        raise MetricError("empty relevant set")
    hits = sum(1 for tid in list(_ranked_ids(ranking))[:k] if tid in relevant)
    return hits / (k if strict else min(len(relevant), k))


def reciprocal_rank(ranking, relevant) -> float:
    relevant = set(relevant)
    for k, tid in enumerate(_ranked_ids(ranking), start=1):
        if tid in relevant:
            return 1.0 / k
    return 0.0


def evaluate_task(task, rankings: dict, k: int = 10, strict_rp: bool = False) -> TaskMetrics:
    """Mean AP and RP@k over the task's judged queries.

    ``rankings`` maps query id to a ranked id list or RankedOutput. With
    ``task.exclude_self`` the query's own id is dropped from its relevant set.
    """
    aps, rps = [], []
    for qid in task.query_ids:
        if qid not in rankings:
            raise MetricError(f"task {task.name!r}: query {qid!r} missing from rankings")
        rel = set(task.qrels[qid])
        if task.exclude_self:
            rel.discard(qid)
            if not rel:
                continue
        aps.append(average_precision(rankings[qid], rel))
        rps.append(rp_at_k(rankings[qid], rel, k, strict_rp))
    if not aps:
        raise MetricError(f"task {task.name!r}: no evaluable queries")
    return TaskMetrics(task.name, task.task_group, math.fsum(aps) / len(aps),
                       math.fsum(rps) / len(rps), len(aps))


def macro_aggregate(per_task: Sequence[TaskMetrics]) -> dict[str, float]:
    """Average tasks within a group first, then take the unweighted mean over groups."""
    if not per_task:
        raise MetricError("no tasks to aggregate")
    groups: dict[str, list[TaskMetrics]] = OrderedDict()
    for tm in per_task:
        groups.setdefault(tm.task_group or tm.task, []).append(tm)
    out = {}
    for key in ("map", "rp_at_10"):
        group_means = [math.fsum(getattr(t, key) for t in g) / len(g) for g in groups.values()]
        out[key] = math.fsum(group_means) / len(group_means)
    out["n_groups"] = len(groups)
    return out


def metric_report(per_task: Sequence[TaskMetrics]) -> dict:
    return {"per_task": {t.task: t.as_dict() for t in per_task}, "task_avg": macro_aggregate(per_task)}


def format_metric_table(report: dict) -> str:
    """Aligned text table in percentage points, one decimal."""
    rows = [(name, m["map"], m["rp_at_10"]) for name, m in report["per_task"].items()]
    rows.append(("Task Avg", report["task_avg"]["map"], report["task_avg"]["rp_at_10"]))
    width = max(len(r[0]) for r in rows)
    lines = [f"{'task':<{width}}  {'MAP':>6}  {'RP@10':>6}"]
    for name, m, rp in rows:
        lines.append(f"{name:<{width}}  {100 * m:6.1f}  {100 * rp:6.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# latency


@dataclass
class BenchReport:
    warmup: int
    measured: int
    per_task: dict = field(default_factory=dict)  # task -> {mean_ms, se_ms, n, note}
    macro_mean_ms: float = 0.0
    macro_se_ms: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        width = max([len(t) for t in self.per_task] + [5])
        lines = [f"{'task':<{width}}  {'mean ms':>9}  {'SE':>7}  {'n':>4}"]
        for name, r in self.per_task.items():
            lines.append(f"{name:<{width}}  {r['mean_ms']:9.3f}  {r['se_ms']:7.3f}  {r['n']:4d}")
        lines.append(f"{'macro':<{width}}  {self.macro_mean_ms:9.3f}  {self.macro_se_ms:7.3f}")
        return "\n".join(lines)


def standard_error(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def bench_latency(rank_fn: Callable[[object, str], object], tasks, warmup: int = 30, measured: int = 100,
                  seed: int = 0, clock: Callable[[], float] = time.perf_counter) -> BenchReport:
    """Time ``rank_fn(task, query_id)`` per query, sequentially.

    Per task: ``warmup`` untimed calls, then ``measured`` timed calls on a
    seeded query subset. Tasks with fewer queries use all of them (cycling
    for warmup) and get a note in the report.
    """
    rng = np.random.default_rng(seed)
    report = BenchReport(warmup=warmup, measured=measured)
    for task in tasks:
        qids = list(task.query_ids)
        if not qids:
            raise MetricError(f"task {task.name!r} has no queries")
        order = [qids[i] for i in rng.permutation(len(qids))]
        for i in range(warmup):
            rank_fn(task, order[i % len(order)])
        chosen = order[:measured]
        spans = []
        for qid in chosen:
            t0 = clock()
            rank_fn(task, qid)
            spans.append((clock() - t0) * 1e3)
        entry = {"mean_ms": float(np.mean(spans)), "se_ms": standard_error(spans), "n": len(spans), "note": ""}
        if len(chosen) < measured:
            entry["note"] = f"only {len(chosen)} queries available"
        report.per_task[task.name] = entry
    means = [r["mean_ms"] for r in report.per_task.values()]
    report.macro_mean_ms = float(np.mean(means))
    report.macro_se_ms = standard_error(means)
    return report
