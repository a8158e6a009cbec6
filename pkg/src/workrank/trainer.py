"""Training loop: linear warmup/decay, AdamW, periodic validation MAP."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .contrastive import DEFAULT_TAUS, LossConfig, LossError, LossWeights, batch_loss
from .encoder import EncoderParams, init_params
from .interaction import InteractionConfig
from .metrics import evaluate_task, macro_aggregate
from .ranker import Ranker, build_cache
from .sampler import BatchSampler, SamplingError

logger = logging.getLogger(__name__)

# Two peak learning rates: 8e-5 for the main runs, 8e-4 from the tuning grid.
LR_PRESETS = {"main": 8e-5, "grid": 8e-4}
PROBE_STEP_OFFSET = 1 << 40  # probe batches never collide with training steps


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    batch_skills: int = 512
    peak_lr: float = LR_PRESETS["main"]
    warmup_fraction: float = 0.1
    eval_every: int = 50
    weights: LossWeights = LossWeights()
    taus: dict = field(default_factory=lambda: dict(DEFAULT_TAUS))
    interaction: InteractionConfig = InteractionConfig()
    loss: str = "mtm_symmetric"
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment_p: float = 0.8
    max_tokens: int | None = 64
    keep_best: bool = True
    vocab_size: int = 1 << 15
    dim: int = 32
    with_projection: bool = False
    probe_batches: int = 4

    def __post_init__(self):
        if self.steps < 1 or self.eval_every < 1:
            raise TrainingError("steps and eval_every must be >= 1")
        if not 0 < self.warmup_fraction < 1:
            raise TrainingError("warmup_fraction must lie in (0, 1)")
        if not self.peak_lr > 0:
            raise TrainingError("peak_lr must be positive")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, self.interaction, self.weights, dict(self.taus), self.max_tokens)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.as_dict()
        d["interaction"] = self.interaction.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "interaction" in d:
            d["interaction"] = InteractionConfig(**d["interaction"])
        if "peak_lr" in d and isinstance(d["peak_lr"], str):
            d["peak_lr"] = LR_PRESETS[d["peak_lr"]]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def warmup_steps(config: TrainConfig) -> int:
    return math.ceil(config.warmup_fraction * config.steps)


def lr_at(step: int, config: TrainConfig) -> float:
    warm = warmup_steps(config)
    if step <= warm:
        return config.peak_lr * step / warm
    return config.peak_lr * max(config.steps - step, 0) / (config.steps - warm)


class AdamW:
    """Adam moments with decoupled weight decay, one state per parameter block."""

    def __init__(self, params: EncoderParams, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.blocks().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.blocks().items()}
        self.t = 0

    def step(self, params: EncoderParams, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in params.blocks().items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class CheckpointRecord:
    step: int
    params: EncoderParams
    metrics: dict
    task_avg_map: float


@dataclass
class TrainResult:
    best: CheckpointRecord
    initial: CheckpointRecord
    final_params: EncoderParams
    history: list[dict]
    initial_loss: float
    final_loss: float

    @property
    def knowledge_gain(self) -> float:
        return knowledge_gain(self.best.task_avg_map, self.initial.task_avg_map)


def knowledge_gain(map_after: float, map_before: float) -> float:
    return map_after - map_before


def evaluate(params: EncoderParams, tasks, interaction: InteractionConfig) -> tuple[dict, float]:
    """Per-task metrics and the task-average MAP for ``params``."""
    caches = {}
    for task in tasks:
        if task.target_space.name not in caches:
            caches[task.target_space.name] = build_cache(params, task.target_space)
    ranker = Ranker(params, interaction, caches)
    per_task = [evaluate_task(t, ranker.rank_task(t)) for t in tasks]
    return {t.task: t.as_dict() for t in per_task}, macro_aggregate(per_task)["map"]


def probe_loss(params, sampler: BatchSampler, loss_config: LossConfig, n_batches: int) -> float:
    """Mean loss on a fixed set of batches, used to compare start and end of training."""
    vals = [batch_loss(params, sampler.sample(PROBE_STEP_OFFSET + i), loss_config, with_grad=False).total
            for i in range(n_batches)]
    return float(np.mean(vals))


def train(config: TrainConfig, graphs: dict, validation_tasks, params: EncoderParams | None = None,
          on_record=None) -> TrainResult:
    """Run ``config.steps`` updates and keep the checkpoint with the best validation MAP.

    Validation runs at step 0, every ``eval_every`` steps and at the last
    step. Ties keep the earliest checkpoint. With ``keep_best=False`` the
    final step is returned instead.
    """
    loss_config = config.loss_config()
    enabled = [g for g in loss_config.weights.enabled() if g in graphs]
    if len(enabled) != len(loss_config.weights.enabled()):
        raise TrainingError(f"graphs missing for enabled losses: {loss_config.weights.enabled()}")
    try:
        sampler = BatchSampler(graphs, config.batch_skills, config.seed, enabled, augment_p=config.augment_p)
    except SamplingError as exc:
        raise TrainingError(str(exc)) from None

    if params is None:
        params = init_params(config.seed, config.vocab_size, config.dim, config.with_projection)
    params = params.copy()
    opt = AdamW(params, config.beta1, config.beta2, config.eps, config.weight_decay)

    history: list[dict] = []

    def emit(rec):
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    metrics, task_map = evaluate(params, validation_tasks, config.interaction)
    initial = CheckpointRecord(0, params.copy(), metrics, task_map)
    best = initial
    initial_loss = probe_loss(params, sampler, loss_config, config.probe_batches)
    emit({"step": 0, "loss": None, "lr": 0.0, "eval": {"task_avg_map": task_map, "per_task": metrics}})

    for step in range(1, config.steps + 1):
        batch = sampler.sample(step)
        try:
            result = batch_loss(params, batch, loss_config)
        except LossError as exc:
            raise TrainingError(f"step {step}: {exc}") from None
        lr = lr_at(step, config)
        opt.step(params, result.grads, lr)
        rec = {"step": step, "loss": result.total, "lr": lr,
               "per_graph": {k: v for k, v in result.per_graph.items()}}
        if step % config.eval_every == 0 or step == config.steps:
            metrics, task_map = evaluate(params, validation_tasks, config.interaction)
            rec["eval"] = {"task_avg_map": task_map, "per_task": metrics}
            if not config.keep_best or task_map > best.task_avg_map:
                best = CheckpointRecord(step, params.copy(), metrics, task_map)
            logger.info("step %d loss %.4f map %.4f", step, result.total, task_map)
        emit(rec)

    final_loss = probe_loss(params, sampler, loss_config, config.probe_batches)
    return TrainResult(best, initial, params, history, initial_loss, final_loss)


def single_graph_config(config: TrainConfig, graph: str) -> TrainConfig:
    """Copy of ``config`` training through one graph only."""
    w = {g: (1.0 if g == graph else 0.0) for g in ("job", "vacancy", "alternative")}
    return replace(config, weights=LossWeights(**w))
