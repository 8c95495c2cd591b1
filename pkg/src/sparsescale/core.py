"""Domain types, the three-phase sparsity schedule engine and FLOPs accounting.

A sparse pre-training run is described by a :class:`SparsityScheduleConfig`
(compute fractions for the dense, iterative-pruning and recovery phases, a
target sparsity and a FLOPs budget). :func:`build_schedule` materializes it
into a :class:`ParamTrajectory`: the ordered list of constant-size stretches
``(active_params, tokens)`` that every other module accounts against.

Compute is measured as ``6 * active_params * tokens``.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._validation import check_count, check_fraction, check_positive
from .exceptions import InfeasibleError

FLOPS_PER_PARAM_TOKEN = 6

DENSE = "dense"
PRUNE = "prune"
RECOVER = "recover"
PHASES = (DENSE, PRUNE, RECOVER)

# Guards float division when a phase budget is an exact multiple of a step.
_STEP_EPS = 1e-9


def round_half_up(x):
    """Round to the nearest integer, halves upward (monotone, unlike ``round``)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ModelShape:
    """Parameter counts of a starting model.

    Only ``prunable_params`` (linear-layer weights) are ever removed;
    embeddings and normalization parameters stay dense.
    """

    prunable_params: int
    nonprunable_params: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prunable_params",
                           check_count(self.prunable_params, "prunable_params", 1))
        object.__setattr__(self, "nonprunable_params",
                           check_count(self.nonprunable_params, "nonprunable_params", 0))

    @property
    def total_params(self):
        return self.prunable_params + self.nonprunable_params


@dataclass(frozen=True)
class SparsityScheduleConfig:
    """Declarative three-phase sparse pre-training run.

    Parameters
    ----------
    shape : ModelShape
        Starting (dense) model.
    target_sparsity : float
        Fraction of prunable parameters removed by the end of the run, in [0, 1).
    f_dense, f_prune : float
        Fractions of ``total_compute`` given to the dense and iterative-pruning
        phases; the rest goes to sparse recovery.
    total_compute : float
        Training FLOPs budget.
    tokens_per_step : int
        Tokens consumed by one optimizer step (the batch size in tokens).
    steps_per_iteration : int
        Training steps between two consecutive pruning events.
    """

    shape: ModelShape
    target_sparsity: float
    f_dense: float
    f_prune: float
    total_compute: float
    tokens_per_step: int = 1
    steps_per_iteration: int = 100

    def __post_init__(self):
        if not isinstance(self.shape, ModelShape):
            raise TypeError("shape must be a ModelShape")
        object.__setattr__(self, "target_sparsity",
                           check_fraction(self.target_sparsity, "target_sparsity",
                                          closed_right=False))
        f_dense = check_fraction(self.f_dense, "f_dense")
        f_prune = check_fraction(self.f_prune, "f_prune")
        if f_dense + f_prune > 1 + 1e-12:
            raise ValueError(f"f_dense + f_prune must be <= 1, got {f_dense + f_prune}")
        object.__setattr__(self, "f_dense", f_dense)
        object.__setattr__(self, "f_prune", f_prune)
        object.__setattr__(self, "total_compute",
                           check_positive(self.total_compute, "total_compute"))
        object.__setattr__(self, "tokens_per_step",
                           check_count(self.tokens_per_step, "tokens_per_step", 1))
        object.__setattr__(self, "steps_per_iteration",
                           check_count(self.steps_per_iteration, "steps_per_iteration", 1))

    @property
    def f_recover(self):
        return max(0.0, 1.0 - self.f_dense - self.f_prune)

    @property
    def final_prunable(self):
        return round_half_up(self.shape.prunable_params * (1 - self.target_sparsity))

    @property
    def final_params(self):
        return self.shape.nonprunable_params + self.final_prunable

    def step_compute(self, active_params):
        return FLOPS_PER_PARAM_TOKEN * active_params * self.tokens_per_step


class Segment(NamedTuple):
    active_params: int
    tokens: int
    phase: str = DENSE


@dataclass(frozen=True)
class ParamTrajectory:
    """Ordered constant-parameter stretches of a run.

    One segment for the dense phase, one per pruning iteration and one for
    the recovery phase (phases with no steps are omitted).
    """

    segments: tuple
    nonprunable_params: int = 0
    tokens_per_step: int = 1
    removal_fraction: float = 0.0

    def __post_init__(self):
        segs = tuple(Segment(int(n), int(d), str(p)) for n, d, p in
                     (_as_segment(s) for s in self.segments))
        if not segs:
            raise ValueError("a trajectory needs at least one segment")
        for seg in segs:
            if seg.active_params <= 0 or seg.tokens <= 0:
                raise ValueError(f"segments need positive params and tokens, got {seg}")
            if seg.phase not in PHASES:
                raise ValueError(f"unknown phase {seg.phase!r}")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_pairs(cls, pairs, nonprunable_params=0, tokens_per_step=1):
        """Build from bare ``(active_params, tokens)`` pairs."""
        return cls(tuple(Segment(n, d) for n, d in pairs),
                   nonprunable_params=nonprunable_params,
                   tokens_per_step=tokens_per_step)

    @property
    def active_params(self):
        return np.array([s.active_params for s in self.segments], dtype=float)

    @property
    def tokens(self):
        return np.array([s.tokens for s in self.segments], dtype=float)

    @property
    def total_tokens(self):
        return sum(s.tokens for s in self.segments)

    @property
    def initial_params(self):
        return self.segments[0].active_params

    @property
    def final_params(self):
        return self.segments[-1].active_params

    @property
    def max_params(self):
        return max(s.active_params for s in self.segments)

    @property
    def n_iterations(self):
        return sum(1 for s in self.segments if s.phase == PRUNE)

    def phase_compute(self, phase):
        return FLOPS_PER_PARAM_TOKEN * sum(
            s.active_params * s.tokens for s in self.segments if s.phase == phase)

    def steps(self):
        """Per-segment step counts (tokens must be whole steps)."""
        return [s.tokens // self.tokens_per_step for s in self.segments]


def _as_segment(s):
    if isinstance(s, Segment):
        return s
    if len(s) == 2:
        return (s[0], s[1], DENSE)
    return tuple(s)


@dataclass(frozen=True)
class RunRecord:
    """One completed or simulated training run."""

    avg_params: float
    total_tokens: float
    final_loss: float
    sparsity: float = 0.0
    final_params: float = None
    shape: ModelShape = None
    label: str = ""
    source: str = "measured"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "avg_params", check_positive(self.avg_params, "avg_params"))
        object.__setattr__(self, "total_tokens",
                           check_positive(self.total_tokens, "total_tokens"))
        object.__setattr__(self, "final_loss", check_positive(self.final_loss, "final_loss"))
        object.__setattr__(self, "sparsity",
                           check_fraction(self.sparsity, "sparsity", closed_right=False))
        if self.final_params is not None:
            object.__setattr__(self, "final_params",
                               check_positive(self.final_params, "final_params"))
        if self.source not in ("measured", "simulated"):
            raise ValueError(f"source must be 'measured' or 'simulated', got {self.source!r}")

    @property
    def final_nonzero_params(self):
        """Active parameters at the end of the run, if derivable."""
        if self.final_params is not None:
            return self.final_params
        if self.shape is not None:
            return float(self.shape.nonprunable_params
                         + round_half_up(self.shape.prunable_params * (1 - self.sparsity)))
        if self.sparsity == 0:
            return self.avg_params
        return None


def prunable_counts(prunable, sparsity, n_iterations):
    """Prunable sizes after each of ``n_iterations`` geometric removals.

    Intermediate counts are rounded half-up; the last one is snapped to the
    exact target ``round(prunable * (1 - sparsity))``.
    """
    k = np.arange(1, n_iterations + 1)
    keep = (1.0 - sparsity) ** (1.0 / n_iterations)
    counts = np.floor(prunable * keep ** k + 0.5).astype(np.int64)
    counts[-1] = round_half_up(prunable * (1 - sparsity))
    return counts


def removal_fraction(sparsity, n_iterations):
    """Per-iteration removal fraction that reaches ``sparsity`` in ``n_iterations``."""
    return 1.0 - (1.0 - sparsity) ** (1.0 / n_iterations)


def _iteration_cap(prunable, sparsity):
    # Largest K whose smallest (last) geometric removal still takes >= 1 weight,
    # which keeps rounded sizes strictly decreasing.
    final = prunable * (1 - sparsity)
    return max(int(math.floor(math.log(1 / (1 - sparsity)) / math.log1p(1 / final))), 1)


def _strictly_decreasing(prunable, sparsity, n_iterations):
    counts = prunable_counts(prunable, sparsity, n_iterations)
    return counts[0] < prunable and bool(np.all(np.diff(counts) < 0))


def _pruning_cost(cfg, n_iterations):
    counts = prunable_counts(cfg.shape.prunable_params, cfg.target_sparsity, n_iterations)
    active = int(counts.sum()) + n_iterations * cfg.shape.nonprunable_params
    return FLOPS_PER_PARAM_TOKEN * cfg.tokens_per_step * cfg.steps_per_iteration * active


def solve_iterations(cfg, budget=None):
    """Number of pruning iterations that fit the pruning-phase budget.

    Returns the largest ``K`` such that ``K`` iterations of
    ``steps_per_iteration`` steps each, with geometric removal, cost at most
    ``budget`` FLOPs (default ``f_prune * total_compute``), together with the
    per-iteration removal fraction ``1 - (1 - S) ** (1 / K)``. Pruning cost
    is nondecreasing in ``K``, so ``K`` is found by doubling then bisection.

    ``K`` is also capped so every iteration removes at least one weight.

    Raises
    ------
    InfeasibleError
        If not even one iteration fits, or the sparsity removes no weight.
    """
    sparsity = cfg.target_sparsity
    if sparsity <= 0:
        raise InfeasibleError("solve_iterations needs target_sparsity > 0",
                              constraint="target_sparsity")
    if budget is None:
        if cfg.f_prune <= 0:
            raise InfeasibleError("target_sparsity > 0 needs f_prune > 0",
                                  constraint="f_prune")
        budget = cfg.f_prune * cfg.total_compute
    if cfg.final_prunable >= cfg.shape.prunable_params:
        raise InfeasibleError(
            f"target_sparsity {sparsity} removes no weight from "
            f"{cfg.shape.prunable_params} prunable parameters",
            constraint="target_sparsity")
    budget = budget * (1 + _STEP_EPS)
    if _pruning_cost(cfg, 1) > budget:
        raise InfeasibleError(
            f"pruning-phase budget {budget:.4g} FLOPs cannot fit one iteration of "
            f"{cfg.steps_per_iteration} steps ({_pruning_cost(cfg, 1):.4g} FLOPs); "
            "raise f_prune or total_compute, or lower steps_per_iteration",
            constraint="f_prune")
    cap = _iteration_cap(cfg.shape.prunable_params, sparsity)
    lo, hi = 1, 2
    while hi <= cap and _pruning_cost(cfg, hi) <= budget:
        lo, hi = hi, hi * 2
    hi = min(hi, cap + 1)
    # invariant: cost(lo) <= budget, and hi is infeasible or beyond the cap
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _pruning_cost(cfg, mid) <= budget:
            lo = mid
        else:
            hi = mid
    if lo == cap:
        # float rounding right at the cap can still produce a repeated size
        while lo > 1 and not _strictly_decreasing(cfg.shape.prunable_params, sparsity, lo):
            lo -= 1
    return lo, removal_fraction(sparsity, lo)


def _whole_steps(budget, step_cost):
    if budget <= 0:
        return 0
    return int(math.floor(budget / step_cost + _STEP_EPS))


def build_schedule(cfg):
    """Materialize a :class:`SparsityScheduleConfig` into a trajectory.

    Phase boundaries are placed cumulatively: the dense phase takes whole
    steps up to ``f_dense * C``; the pruning phase fills up to
    ``(f_dense + f_prune) * C`` with ``K`` iterations of exactly ``P`` steps
    (see :func:`solve_iterations`) and the final iteration absorbs the
    remaining whole steps of that budget; recovery takes whole steps up to
    ``C``. Each phase therefore lands within one step's compute of its share.

    ``S = 0`` yields a single dense segment spanning the whole budget.
    """
    shape = cfg.shape
    n0 = shape.total_params
    t = cfg.tokens_per_step
    total = cfg.total_compute
    if cfg.step_compute(n0) > total * (1 + _STEP_EPS):
        raise InfeasibleError(
            f"total_compute {total:.4g} FLOPs is below one dense step "
            f"({cfg.step_compute(n0):.4g} FLOPs)", constraint="total_compute")

    if cfg.target_sparsity == 0:
        steps = _whole_steps(total, cfg.step_compute(n0))
        return ParamTrajectory((Segment(n0, steps * t, DENSE),),
                               nonprunable_params=shape.nonprunable_params,
                               tokens_per_step=t)

    segments = []
    dense_steps = _whole_steps(cfg.f_dense * total, cfg.step_compute(n0))
    if dense_steps:
        segments.append(Segment(n0, dense_steps * t, DENSE))
    used = dense_steps * cfg.step_compute(n0)

    prune_end = (cfg.f_dense + cfg.f_prune) * total
    if cfg.f_prune <= 0:
        raise InfeasibleError("target_sparsity > 0 needs f_prune > 0", constraint="f_prune")
    n_iter, rho = solve_iterations(cfg, budget=prune_end - used)
    counts = prunable_counts(shape.prunable_params, cfg.target_sparsity, n_iter)
    iter_tokens = cfg.steps_per_iteration * t
    for c in counts:
        active = shape.nonprunable_params + int(c)
        segments.append(Segment(active, iter_tokens, PRUNE))
        used += cfg.step_compute(active) * cfg.steps_per_iteration

    final = segments[-1].active_params
    extra = _whole_steps(prune_end - used, cfg.step_compute(final))
    if extra:
        segments[-1] = segments[-1]._replace(tokens=segments[-1].tokens + extra * t)
        used += extra * cfg.step_compute(final)

    recover_steps = _whole_steps(total - used, cfg.step_compute(final))
    if recover_steps:
        segments.append(Segment(final, recover_steps * t, RECOVER))

    return ParamTrajectory(tuple(segments), nonprunable_params=shape.nonprunable_params,
                           tokens_per_step=t, removal_fraction=rho)


def average_params(traj, prunable_only=False):
    """Token-weighted mean active parameter count ``sum(N_k d_k) / sum(d_k)``.

    With ``prunable_only`` the nonprunable parameters are subtracted first.
    """
    n = traj.active_params
    if prunable_only:
        n = n - traj.nonprunable_params
    d = traj.tokens
    return float(np.dot(n, d) / d.sum())


def effective_compute(traj):
    """Training FLOPs ``6 * sum(N_k d_k)``, exact in integer arithmetic."""
    return FLOPS_PER_PARAM_TOKEN * sum(s.active_params * s.tokens for s in traj.segments)


def final_params(traj, prunable_only=False):
    n = traj.final_params
    return n - traj.nonprunable_params if prunable_only else n


def compression_rate(traj, prunable_only=False):
    """Average over final active parameter count (1.0 for dense runs)."""
    return average_params(traj, prunable_only) / final_params(traj, prunable_only)


def match_dense(traj):
    """Dense shape whose total size equals the trajectory's average size.

    Nonprunable parameters are kept; the prunable part absorbs the
    difference. Train it on ``traj.total_tokens`` to match effective compute.
    """
    avg = round_half_up(average_params(traj))
    return ModelShape(avg - traj.nonprunable_params, traj.nonprunable_params)


def dense_trajectory(shape, tokens, tokens_per_step=1):
    """Single-segment trajectory for plain dense training."""
    return ParamTrajectory((Segment(shape.total_params, tokens, DENSE),),
                           nonprunable_params=shape.nonprunable_params,
                           tokens_per_step=tokens_per_step)


def canonical_config(shape, total_compute, target_sparsity=0.8, tokens_per_step=1,
                     steps_per_iteration=100):
    """The 25% dense / 50% pruning / 25% recovery schedule."""
    return SparsityScheduleConfig(shape, target_sparsity, 0.25, 0.5, total_compute,
                                  tokens_per_step=tokens_per_step,
                                  steps_per_iteration=steps_per_iteration)


def trajectory_rows(traj: ParamTrajectory) -> Sequence[tuple]:
    """``(segment_index, active_params, tokens)`` rows for CSV export."""
    return [(i, s.active_params, s.tokens) for i, s in enumerate(traj.segments)]
