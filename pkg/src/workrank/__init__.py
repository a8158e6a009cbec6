"""Contrastive training and late-interaction ranking over work-domain text spaces."""

from .contrastive import (BatchSimilarityMatrix, LossConfig, LossWeights, infonce, loss_gradients,
                          mtm_asymmetric, mtm_pairwise, mtm_symmetric, mtm_total)
from .corpus import (BipartiteGraph, RawVacancyRecord, TaskSpec, TextItem, TextSpace, dedup_merge_jobs,
                     load_graph, load_space, load_task, validate_graph)
from .encoder import EncoderParams, encode, init_params, load_params, save_params, tokenize
from .interaction import (InteractionConfig, sim_maxsim, sim_mean_cosine, sim_softmax, sim_softmax_ymean,
                          token_similarity)
from .metrics import average_precision, bench_latency, evaluate_task, macro_aggregate, rp_at_k
from .ranker import Ranker, TargetCache, build_cache, rank_query, rank_task
from .sampler import MiniBatch, augment_vacancy, sample_batch
from .trainer import TrainConfig, knowledge_gain, lr_at, train

__version__ = "0.1.0"
