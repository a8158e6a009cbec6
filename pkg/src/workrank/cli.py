"""Command line entry point: ``workrank {cache,rank,eval,train,bench}``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .contrastive import LossError
from .corpus import CorpusError, load_graph, load_space, load_task
from .encoder import EncoderError, load_params, save_params
from .interaction import KINDS, InteractionConfig, InteractionError
from .metrics import (BenchReport, MetricError, TaskMetrics, bench_latency, evaluate_task,
                      format_metric_table, metric_report)
from .ranker import CacheError, Ranker, TargetCache, build_cache
from .sampler import SamplingError
from .trainer import TrainConfig, TrainingError, train

logger = logging.getLogger("workrank")

INPUT_ERRORS = (CorpusError, CacheError, EncoderError, InteractionError, MetricError, LossError,
                SamplingError, KeyError, ValueError)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cache


def cmd_cache(args) -> int:
    space = load_space(args.space, role=args.role)
    if args.params:
        params = load_params(args.params)
        if args.dim is not None and args.dim != params.dim:
            raise CacheError(f"dimension mismatch: params have dim {params.dim}, --dim is {args.dim}")
        cache = build_cache(params, space, max_tokens=args.max_tokens)
    else:
        imported = TargetCache.load(args.import_path, space.name)
        if args.dim is not None and args.dim != imported.dim:
            raise CacheError(f"dimension mismatch: imported embeddings have dim {imported.dim}, --dim is {args.dim}")
        cache = build_cache(imported, space)
    cache.save(args.out)
    print(f"wrote {args.out}: {len(cache)} entries, dim {cache.dim}")
    return 0


# ---------------------------------------------------------------------------
# rank / eval


def _interaction(args) -> InteractionConfig:
    return InteractionConfig(args.scorer, args.tau)


def _ranker_for(tasks, args) -> Ranker:
    params = load_params(args.params) if args.params else None
    caches = {}
    for path in args.cache or []:
        c = TargetCache.load(path)
        caches[path] = c
    by_space = {}
    for task in tasks:
        name = task.target_space.name
        if name in by_space:
            continue
        match = next((c for c in caches.values() if set(c.ids) == set(task.target_space.ids)), None)
        if match is not None:
            by_space[name] = match.aligned_to(task.target_space)
        elif params is not None:
            by_space[name] = build_cache(params, task.target_space)
        else:
            raise CacheError(f"no cache covers target space {name!r} and no --params to build one")
    if params is not None:
        for c in by_space.values():
            if c.dim != params.dim:
                raise CacheError(f"dimension mismatch: cache dim {c.dim}, params dim {params.dim}")
    return Ranker(params, _interaction(args), by_space)


def _rank_all(ranker: Ranker, task, query_cache: TargetCache | None):
    if query_cache is None:
        if ranker.params is None:
            raise CacheError("ranking needs --params or --query-cache for the query side")
        return ranker.rank_task(task)
    cache = ranker.caches[task.target_space.name]
    out = {}
    for qid in task.query_ids:
        if qid not in query_cache:
            raise CacheError(f"query cache lacks query {qid!r}")
        e_q = query_cache.matrices[query_cache.index(qid)].astype(np.float64)
        out[qid] = ranker.rank_query(e_q, cache, qid, task.exclude_self)
    return out


def _fmt_score(s: float) -> str:
    return "-inf" if s == -math.inf else f"{s:.8f}"


def cmd_rank(args) -> int:
    task = load_task(args.task)
    ranker = _ranker_for([task], args)
    query_cache = TargetCache.load(args.query_cache) if args.query_cache else None
    outputs = _rank_all(ranker, task, query_cache)
    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
    try:
        for qid, ranked in outputs.items():
            for tid, score, rank in ranked.top(args.topk):
                out.write(f"{qid}\t{tid}\t{_fmt_score(score)}\t{rank}\n")
    finally:
        if args.out:
            out.close()
    return 0


def read_rankings(path) -> dict[str, list[str]]:
    rows: dict[str, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: expected query_id, target_id, score, rank")
            rows.setdefault(parts[0], []).append((int(parts[3]), parts[1]))
    return {q: [t for _, t in sorted(v)] for q, v in rows.items()}


def read_metrics(path) -> list[TaskMetrics]:
    """Precomputed per-task metrics: ``{"unit": "percent"|"fraction", "tasks": [...]}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    scale = 0.01 if doc.get("unit", "fraction") == "percent" else 1.0
    out = []
    for t in doc["tasks"]:
        out.append(TaskMetrics(t["task"], t.get("task_group") or t["task"], scale * t["map"],
                               scale * t["rp_at_10"], int(t.get("n_queries", 1))))
    return out


def cmd_eval(args) -> int:
    if args.metrics:
        per_task = read_metrics(args.metrics)
    else:
        if not args.task:
            raise UsageError("eval needs --task (or --metrics)")
        tasks = [load_task(p) for p in args.task]
        per_task = []
        if args.rankings:
            if len(args.rankings) != len(tasks):
                raise UsageError("give one --rankings file per --task, in the same order")
            for task, path in zip(tasks, args.rankings):
                per_task.append(evaluate_task(task, read_rankings(path), strict_rp=args.strict_rp))
        else:
            ranker = _ranker_for(tasks, args)
            query_cache = TargetCache.load(args.query_cache) if args.query_cache else None
            for task in tasks:
                per_task.append(evaluate_task(task, _rank_all(ranker, task, query_cache),
                                              strict_rp=args.strict_rp))
    report = metric_report(per_task)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(format_metric_table(report))
    return 0


# ---------------------------------------------------------------------------
# train


def load_run_config(path, overrides: dict | None = None):
    """Resolve a run config into ``(TrainConfig, graphs, validation tasks, output_dir)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    if "seed" not in doc:
        raise UsageError(f"{path}: run config needs a seed")
    train_fields = dict(doc.get("train", {}))
    for key in ("interaction", "weights", "taus", "seed"):
        if key in doc:
            train_fields[key] = doc[key]
    for key, value in (overrides or {}).items():
        if value is not None:
            train_fields[key] = value
    config = TrainConfig.from_dict(train_fields)

    data = doc["data"]
    skills = load_space(resolve(data["skills"]), role="skill")
    graphs = {}
    for name, entry in data["graphs"].items():
        targets = load_space(resolve(entry["targets"]))
        graphs[name] = load_graph(resolve(entry["edges"]), skills, targets)
    spaces = {resolve(data["skills"]): skills}
    tasks = [load_task(resolve(p), spaces) for p in data.get("validation_tasks", [])]
    if not tasks:
        raise UsageError(f"{path}: at least one validation task is required")
    output_dir = resolve(doc.get("output_dir", "run"))
    return config, graphs, tasks, output_dir


def cmd_train(args) -> int:
    overrides = {"steps": args.steps, "seed": args.seed}
    config, graphs, tasks, output_dir = load_run_config(args.config, overrides)
    output_dir = args.out or output_dir
    os.makedirs(output_dir, exist_ok=True)
    history_path = os.path.join(output_dir, "history.jsonl")
    with open(history_path, "w", encoding="utf-8", newline="\n") as hist:
        def write(rec):
            hist.write(json.dumps(rec, sort_keys=True) + "\n")
        result = train(config, graphs, tasks, on_record=write)
    save_params(result.best.params, os.path.join(output_dir, "best.uwep"))
    save_params(result.final_params, os.path.join(output_dir, "final.uwep"))
    summary = {
        "best_step": result.best.step,
        "best_task_avg_map": result.best.task_avg_map,
        "initial_task_avg_map": result.initial.task_avg_map,
        "knowledge_gain": result.knowledge_gain,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "config": config.as_dict(),
    }
    with open(os.path.join(output_dir, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best step {result.best.step}: task-average MAP {100 * result.best.task_avg_map:.1f} "
          f"(initial {100 * result.initial.task_avg_map:.1f}, gain {100 * result.knowledge_gain:+.1f})")
    return 0


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    tasks = [load_task(p) for p in args.tasks]
    if not args.params:
        raise UsageError("bench needs --params")
    ranker = _ranker_for(tasks, args)  # cache building stays outside the timed span

    def rank_fn(task, qid):
        cache = ranker.caches[task.target_space.name]
        return ranker.rank_query(task.query_space.text(qid), cache, qid, task.exclude_self)

    report: BenchReport = bench_latency(rank_fn, tasks, warmup=args.warmup, measured=args.n, seed=args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json() + "\n")
    print(report.table())
    return 0


# ---------------------------------------------------------------------------


def _scorer_args(p):
    p.add_argument("--scorer", choices=KINDS, default="softmax_token")
    p.add_argument("--tau", type=float, default=0.5, help="late-interaction temperature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="workrank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cache", help="build a target-space embedding cache")
    p.add_argument("--space", required=True)
    p.add_argument("--role", default=None)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--params")
    src.add_argument("--import", dest="import_path", help="cache file of externally computed embeddings")
    p.add_argument("--dim", type=int)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("rank", help="rank every query of a task")
    p.add_argument("--task", required=True)
    p.add_argument("--cache", action="append")
    p.add_argument("--params")
    p.add_argument("--query-cache")
    p.add_argument("--topk", type=int)
    p.add_argument("--out")
    _scorer_args(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="MAP and RP@10 per task plus the task average")
    p.add_argument("--task", action="append")
    p.add_argument("--rankings", action="append")
    p.add_argument("--metrics", help="precomputed per-task metrics JSON")
    p.add_argument("--cache", action="append")
    p.add_argument("--params")
    p.add_argument("--query-cache")
    p.add_argument("--strict-rp", action="store_true", help="RP@10 as hits/10 instead of hits/min(R,10)")
    p.add_argument("--out")
    _scorer_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the toy encoder from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="per-query latency benchmark")
    p.add_argument("--tasks", action="append", required=True)
    p.add_argument("--params")
    p.add_argument("--cache", action="append")
    p.add_argument("--warmup", type=int, default=30)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _scorer_args(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
