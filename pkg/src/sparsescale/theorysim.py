"""Loss dynamics under a single compute power law.

For fixed model size the loss follows ``L(C) = (A / C) ** alpha``. Its
first-order change over an increment of compute is
``dL = -alpha * A**alpha * C**(-alpha - 1) * dC``, and with
``dC = 6 * N_k * d_k`` the total decrease over a run is a
coefficient-weighted sum of active parameter counts. When the coefficients
``C**(-alpha - 1)`` barely move, that sum is proportional to the average
parameter count.

Simulations skip a burn-in region (by default the first 2.6% of the run's
compute) where the single power law does not hold and ``C -> 0`` diverges.
Loss spikes at pruning events are not modelled.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive
from .core import FLOPS_PER_PARAM_TOKEN, effective_compute
from .exceptions import SingularityError

DEFAULT_BURN_IN = 0.026


@dataclass(frozen=True)
class TheoryParams:
    A: float
    alpha: float

    def __post_init__(self):
        check_positive(self.A, "A")
        check_positive(self.alpha, "alpha")


def loss_of_compute(p, compute):
    """``(A / C) ** alpha``."""
    c = np.asarray(compute, dtype=float)
    if np.any(c <= 0):
        raise SingularityError("compute must be > 0")
    out = (p.A / c) ** p.alpha
    return float(out) if out.ndim == 0 else out


def delta_loss(p, prefix_compute, increment):
    """First-order loss change when compute grows from ``prefix_compute`` by ``increment``."""
    c = np.asarray(prefix_compute, dtype=float)
    dc = np.asarray(increment, dtype=float)
    if np.any(c <= 0):
        raise SingularityError("prefix compute must be > 0")
    if np.any(dc < 0):
        raise ValueError("compute increment must be >= 0")
    out = -p.alpha * p.A ** p.alpha * c ** (-p.alpha - 1) * dc
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SimulationResult:
    compute: np.ndarray        # cumulative compute at each curve point
    loss: np.ndarray
    segment_delta: np.ndarray  # summed loss change per trajectory segment
    start_compute: float

    @property
    def total_delta(self):
        return float(self.segment_delta.sum())

    @property
    def final_loss(self):
        return float(self.loss[-1])


def _segment_compute(traj):
    return np.array([FLOPS_PER_PARAM_TOKEN * s.active_params * s.tokens
                     for s in traj.segments], dtype=float)


def _start_compute(traj, burn_in, prior_compute):
    if not 0 <= burn_in < 1:
        raise ValueError(f"burn_in must lie in [0, 1), got {burn_in}")
    check_positive(prior_compute, "prior_compute", strict=False)
    start = prior_compute + burn_in * effective_compute(traj)
    if start <= 0:
        raise SingularityError(
            "simulation would start at zero compute; use burn_in > 0 or prior_compute > 0")
    return start


def simulate_trajectory(p, traj, burn_in=DEFAULT_BURN_IN, prior_compute=0.0,
                        max_substeps=200_000):
    """Accumulate first-order loss changes along a parameter trajectory.

    Compute is laid out as ``prior_compute`` followed by the trajectory;
    integration starts after the first ``burn_in`` fraction of the
    trajectory's compute, from the closed-form loss at that point. Each
    segment is cut into its optimizer steps (or, past ``max_substeps`` in
    total, into proportionally fewer equal pieces) and each piece adds
    ``delta_loss(prefix, piece)``.
    """
    start = _start_compute(traj, burn_in, prior_compute)
    seg_compute = _segment_compute(traj)
    total = seg_compute.sum()
    steps = np.array(traj.steps(), dtype=np.int64)
    if steps.sum() > max_substeps:
        steps = np.maximum(1, np.round(max_substeps * seg_compute / total)).astype(np.int64)
    seg_index = np.repeat(np.arange(len(seg_compute)), steps)
    increments = np.repeat(seg_compute / steps, steps)
    bounds = prior_compute + np.concatenate([[0.0], np.cumsum(increments)])
    lo = np.maximum(bounds[:-1], start)
    hi = np.maximum(bounds[1:], start)
    keep = hi > lo
    lo, hi, seg_index = lo[keep], hi[keep], seg_index[keep]
    dl = delta_loss(p, lo, hi - lo)
    segment_delta = np.bincount(seg_index, weights=dl, minlength=len(seg_compute))
    compute = np.concatenate([[start], hi])
    loss = loss_of_compute(p, start) + np.concatenate([[0.0], np.cumsum(dl)])
    return SimulationResult(compute, loss, segment_delta, start)


@dataclass(frozen=True)
class CoefficientSeries:
    prefix_compute: np.ndarray  # compute before each iteration
    coefficient: np.ndarray     # prefix_compute ** (-alpha - 1)

    @property
    def normalized(self):
        finite = self.coefficient[np.isfinite(self.coefficient)]
        return self.coefficient / finite[0]

    def flatness(self, start_index=0):
        """``(max - min) / mean`` of the coefficient from ``start_index`` on."""
        window = self.coefficient[start_index:]
        if window.size == 0:
            raise ValueError("empty window")
        return float((window.max() - window.min()) / window.mean())

    def ratio(self, i, j):
        return float(self.coefficient[j] / self.coefficient[i])


def coefficient_series(p, traj, steps_per_iteration=None, prior_compute=0.0,
                       pruning_only=False):
    """``C_prefix ** (-alpha - 1)`` at the start of every iteration.

    By default an iteration is a block of ``steps_per_iteration`` optimizer
    steps across the whole run (dense and recovery included); with
    ``pruning_only`` the iterations are the pruning segments themselves.
    Index ``k`` uses the compute spent before iteration ``k`` (plus
    ``prior_compute``); a zero prefix gives an infinite coefficient.
    """
    seg_compute = _segment_compute(traj)
    seg_start = prior_compute + np.concatenate([[0.0], np.cumsum(seg_compute)])[:-1]
    if pruning_only:
        mask = np.array([s.phase == "prune" for s in traj.segments])
        prefix = seg_start[mask]
    else:
        if steps_per_iteration is None:
            prune_segs = [s for s in traj.segments if s.phase == "prune"]
            steps_per_iteration = (prune_segs[0].tokens // traj.tokens_per_step
                                   if prune_segs else 100)
        steps = np.array(traj.steps(), dtype=float)
        step_edges = np.concatenate([[0.0], np.cumsum(steps)])
        compute_edges = prior_compute + np.concatenate([[0.0], np.cumsum(seg_compute)])
        block_starts = np.arange(0, step_edges[-1], steps_per_iteration, dtype=float)
        prefix = np.interp(block_starts, step_edges, compute_edges)
    with np.errstate(divide="ignore"):
        coef = np.where(prefix > 0, prefix, np.nan) ** (-p.alpha - 1)
    coef = np.where(prefix > 0, coef, np.inf)
    return CoefficientSeries(prefix, coef)


def fit_piecewise_alpha(compute, loss, breakpoint):
    """Power-law exponents before and after ``breakpoint``.

    Least-squares slopes of ``log loss`` against ``log compute`` on each
    side, negated. Points at or after the breakpoint go to the second side.
    """
    c = np.asarray(compute, dtype=float)
    y = np.asarray(loss, dtype=float)
    if c.shape != y.shape:
        raise ValueError("compute and loss must have the same shape")
    if np.any(c <= 0) or np.any(y <= 0):
        raise ValueError("compute and loss must be positive")
    left = c < breakpoint
    slopes = []
    for side in (left, ~left):
        if side.sum() < 3:
            raise ValueError(
                f"need at least 3 points on each side of the breakpoint, got {int(side.sum())}")
        slope, _ = np.polyfit(np.log(c[side]), np.log(y[side]), 1)
        slopes.append(-float(slope))
    return tuple(slopes)


def piecewise_power_law(compute, alphas, breakpoint, loss_at_breakpoint=3.0):
    """Continuous two-piece power law, used to generate synthetic curves."""
    c = np.asarray(compute, dtype=float)
    a1, a2 = alphas
    ratio = c / breakpoint
    return loss_at_breakpoint * np.where(c < breakpoint, ratio ** -a1, ratio ** -a2)


def curve_rows(result):
    """``(cumulative_compute, loss)`` rows for CSV export."""
    return list(zip(result.compute.tolist(), result.loss.tolist()))
