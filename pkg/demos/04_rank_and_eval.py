"""Cache a target space, rank queries against it, score the rankings and time them."""

import os
import tempfile

import numpy as np

from workrank.encoder import init_params
from workrank.interaction import InteractionConfig
from workrank.metrics import bench_latency, evaluate_task, format_metric_table, metric_report
from workrank.ranker import Ranker, TargetCache, build_cache, direct_scores
from workrank.toy import load_toy

toy = load_toy()
task = toy.validation[0]
params = init_params(seed=0, vocab_size=4096, h=16)

# encode every skill once and write the cache file
cache = build_cache(params, task.target_space)
path = os.path.join(tempfile.mkdtemp(), "skills.uwec")
cache.save(path)
cache = TargetCache.load(path, task.target_space.name)
print(f"cached {len(cache)} skills, dim {cache.dim}, {os.path.getsize(path)} bytes")

ranker = Ranker(params, InteractionConfig("softmax_token", 0.5), {cache.space_name: cache})
qid = task.query_ids[0]
out = ranker.rank_query(task.query_space.text(qid), cache, qid)
print(f"\nquery {qid!r}: {task.query_space.text(qid)!r}")
for tid, score, rank in out.top(5):
    mark = "*" if tid in task.qrels[qid] else " "
    print(f"  {rank}. {mark} {task.target_space.text(tid):<28} {score:.4f}")

# the cache changes nothing about the scores
direct = direct_scores(task.query_space.text(qid), task.target_space, params, ranker.config)
print("max |cached - direct| =", float(np.abs(out.scores - direct).max()))

rankings = ranker.rank_task(task)
print("\n" + format_metric_table(metric_report([evaluate_task(task, rankings)])))
print("queries encoded:", ranker.encode_calls)


def rank_fn(t, q):
    return ranker.rank_query(t.query_space.text(q), cache, q)


print("\n" + bench_latency(rank_fn, [task], warmup=30, measured=100).table())
