"""Three-phase sparse pre-training of a TinyLM on a character corpus."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .._validation import check_count, check_positive
from ..core import (FLOPS_PER_PARAM_TOKEN, PRUNE, ParamTrajectory, RunRecord, Segment,
                    SparsityScheduleConfig, average_params, build_schedule,
                    effective_compute)
from .data import BatchSampler, Corpus
from .model import TinyLM, TinyLMSpec, eval_loss, global_magnitude_prune, \
    hidden_for_params, make_optimizer, train_step

DEFAULT_LR = 0.1
DEFAULT_BATCH = 64
# desk-scale x4-spaced LR and batch grids
LR_GRID = (0.025, 0.1, 0.4)
BATCH_GRID = (16, 64, 256)


@dataclass(frozen=True)
class TrainConfig:
    """One desk-scale training run.

    ``batch_size`` is tokens per step and must equal the schedule's
    ``tokens_per_step``. The model architecture comes from ``context``,
    ``embed_dim`` and ``hidden_dim`` plus the corpus vocabulary; its
    parameter counts must equal ``schedule.shape``.
    """

    schedule: SparsityScheduleConfig
    learning_rate: float = DEFAULT_LR
    batch_size: int = DEFAULT_BATCH
    seed: int = 0
    corpus: object = None
    context: int = 8
    embed_dim: int = 16
    hidden_dim: int = 64
    optimizer: str = "sgd"
    lr_schedule: str = "constant"
    warmup_steps: int = 0
    eval_every: int = 0
    label: str = ""

    def __post_init__(self):
        check_positive(self.learning_rate, "learning_rate", strict=False)
        check_count(self.batch_size, "batch_size", 1)
        check_count(self.seed, "seed", 0)
        check_count(self.warmup_steps, "warmup_steps", 0)
        check_count(self.eval_every, "eval_every", 0)
        if self.batch_size != self.schedule.tokens_per_step:
            raise ValueError(
                f"batch_size {self.batch_size} != schedule tokens_per_step "
                f"{self.schedule.tokens_per_step}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got "
                             f"{self.lr_schedule!r}")
        make_optimizer(self.optimizer)

    def model_spec(self, vocab_size):
        return TinyLMSpec(vocab_size, self.context, self.embed_dim, self.hidden_dim)


def make_train_config(target_sparsity=0.8, f_dense=0.25, f_prune=0.5, dense_steps=2000,
                      batch_size=DEFAULT_BATCH, steps_per_iteration=100, corpus=None,
                      context=8, embed_dim=16, hidden_dim=64, **kwargs):
    """Build a :class:`TrainConfig` whose schedule matches the model.

    The compute budget is ``dense_steps`` steps of the unpruned model.
    """
    vocab_size = Corpus.load(corpus).vocab_size
    spec = TinyLMSpec(vocab_size, context, embed_dim, hidden_dim)
    shape = spec.shape
    dense_steps = check_count(dense_steps, "dense_steps", 1)
    compute = FLOPS_PER_PARAM_TOKEN * shape.total_params * batch_size * dense_steps
    schedule = SparsityScheduleConfig(shape, target_sparsity, f_dense, f_prune, compute,
                                      tokens_per_step=batch_size,
                                      steps_per_iteration=steps_per_iteration)
    return TrainConfig(schedule=schedule, batch_size=batch_size, corpus=corpus,
                       context=context, embed_dim=embed_dim, hidden_dim=hidden_dim, **kwargs)


@dataclass
class TrainResult:
    record: RunRecord
    trajectory: ParamTrajectory   # as executed
    planned: ParamTrajectory      # as built by the schedule engine
    train_loss: np.ndarray        # per step
    active_params: np.ndarray     # per step
    evals: list = field(default_factory=list)   # (step, held-out loss)
    model: TinyLM = None
    vocab: str = ""

    def curve_rows(self):
        return [(i, int(n), float(l)) for i, (n, l) in
                enumerate(zip(self.active_params, self.train_loss))]


def learning_rate_at(cfg, step, total_steps):
    lr = cfg.learning_rate
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return lr * (step + 1) / cfg.warmup_steps
    if cfg.lr_schedule == "cosine":
        span = max(1, total_steps - cfg.warmup_steps)
        progress = (step - cfg.warmup_steps) / span
        return lr * 0.5 * (1 + math.cos(math.pi * progress))
    return lr


def run_sparse_pretraining(cfg, on_step=None, keep_model=True):
    """Execute the schedule's dense, pruning and recovery phases.

    Each pruning segment starts with a global magnitude prune down to the
    segment's prunable count, then trains for the segment's steps. The
    executed trajectory is checked against the planned one. ``on_step`` is
    called as ``on_step(model, step)`` after every optimizer step.

    Raises :class:`~sparsescale.exceptions.InfeasibleError` when the schedule
    cannot be built.
    """
    planned = build_schedule(cfg.schedule)
    corpus = Corpus.load(cfg.corpus)
    spec = cfg.model_spec(corpus.vocab_size)
    if spec.shape != cfg.schedule.shape:
        raise ValueError(f"model shape {spec.shape} does not match schedule shape "
                         f"{cfg.schedule.shape}")
    init_ss, data_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = TinyLM(spec, np.random.default_rng(init_ss))
    sampler = BatchSampler(corpus.train, spec.context, cfg.batch_size,
                           np.random.default_rng(data_ss))
    optimizer = make_optimizer(cfg.optimizer)
    nonprunable = spec.shape.nonprunable_params
    total_steps = sum(planned.steps())

    losses = np.empty(total_steps)
    active = np.empty(total_steps, dtype=np.int64)
    evals = [(0, eval_loss(model, corpus.held_out))]
    executed = []
    step = 0
    for seg, n_steps in zip(planned.segments, planned.steps()):
        if seg.phase == PRUNE:
            global_magnitude_prune(model, seg.active_params - nonprunable)
        if model.active_params != seg.active_params:
            raise RuntimeError(
                f"active parameters {model.active_params} != planned {seg.active_params}")
        for _ in range(n_steps):
            lr = learning_rate_at(cfg, step, total_steps)
            losses[step] = train_step(model, sampler(), lr, optimizer)
            active[step] = model.active_params
            step += 1
            if on_step is not None:
                on_step(model, step)
            if cfg.eval_every and step % cfg.eval_every == 0 and step < total_steps:
                evals.append((step, eval_loss(model, corpus.held_out)))
        executed.append(Segment(model.active_params, n_steps * cfg.batch_size, seg.phase))

    final = eval_loss(model, corpus.held_out)
    evals.append((step, final))
    traj = ParamTrajectory(tuple(executed), nonprunable_params=nonprunable,
                           tokens_per_step=cfg.batch_size,
                           removal_fraction=planned.removal_fraction)
    if traj.segments != planned.segments:
        raise RuntimeError("executed trajectory diverged from the planned schedule")
    record = RunRecord(avg_params=average_params(traj), total_tokens=traj.total_tokens,
                       final_loss=final, sparsity=cfg.schedule.target_sparsity,
                       final_params=traj.final_params, shape=spec.shape,
                       label=cfg.label, source="measured",
                       meta={"seed": cfg.seed, "learning_rate": cfg.learning_rate,
                             "batch_size": cfg.batch_size,
                             "f_dense": cfg.schedule.f_dense,
                             "f_prune": cfg.schedule.f_prune,
                             "n_iterations": traj.n_iterations,
                             "effective_compute": effective_compute(traj),
                             "final_prunable": model.active_prunable})
    return TrainResult(record, traj, planned, losses, active, evals,
                       model if keep_model else None, corpus.vocab)


def matched_dense_config(cfg, sparse_traj, label=None):
    """Dense config with total size nearest the sparse run's average size.

    The hidden width is the one whose parameter count is closest to
    ``round(average_params)``; the step count is the one that brings its
    effective compute closest to the sparse run's.
    """
    corpus = Corpus.load(cfg.corpus)
    base = cfg.model_spec(corpus.vocab_size)
    target = average_params(sparse_traj)
    spec = base.with_hidden(hidden_for_params(base, target))
    n = spec.shape.total_params
    step_cost = FLOPS_PER_PARAM_TOKEN * n * cfg.batch_size
    steps = max(1, int(round(effective_compute(sparse_traj) / step_cost)))
    schedule = SparsityScheduleConfig(spec.shape, 0.0, 1.0, 0.0, steps * step_cost,
                                      tokens_per_step=cfg.batch_size,
                                      steps_per_iteration=cfg.schedule.steps_per_iteration)
    if label is None:
        label = f"{cfg.label}-dense" if cfg.label else "matched-dense"
    return replace(cfg, schedule=schedule, hidden_dim=spec.hidden_dim, label=label)


def run_matched_pair(cfg):
    """Sparse run plus its matched dense run; returns both results."""
    sparse = run_sparse_pretraining(cfg)
    dense = run_sparse_pretraining(matched_dense_config(cfg, sparse.trajectory))
    return sparse, dense
