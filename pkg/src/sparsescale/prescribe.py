"""Compute-optimal training prescriptions at a target loss.

Given a fitted law ``L(N, D) = A/N**alpha + B/D**beta + E`` and a target
loss, the loss constraint fixes ``D`` as a strictly decreasing function of
the average parameter count ``N``. The remaining 1-D objective (training
FLOPs, or training plus inference FLOPs) is unimodal in ``log N`` and is
minimized by golden-section search.

Inference costs ``2 * N_final`` FLOPs per token, where ``N_final = N / r``
and ``r`` is the compression rate of the sparsity schedule (``r = 1`` dense).
"""

import math
from dataclasses import asdict, dataclass

from ._validation import check_fraction, check_positive
from .core import ModelShape, build_schedule, canonical_config, compression_rate
from .exceptions import InfeasibleError
from .lawfit import HOFFMANN_FIT, predict_loss

TRAIN_FLOPS_PER_PARAM_TOKEN = 6
INFERENCE_FLOPS_PER_PARAM_TOKEN = 2

_GOLDEN = (math.sqrt(5) - 1) / 2
# Width of the log-N search bracket above the loss-constraint asymptote.
_LOG_SPAN = 40.0


@dataclass(frozen=True)
class Prescription:
    avg_params: float
    final_params: float
    tokens: float
    sparsity: float
    compression: float
    inference_tokens: float
    train_flops: float
    inference_flops: float
    lifetime_flops: float
    target_loss: float
    achieved_loss: float

    def to_dict(self):
        return asdict(self)


def lifetime_flops(avg_params, tokens, final_params, inference_tokens):
    """Training plus inference FLOPs: ``6 N D + 2 N_final T_inf``."""
    for v, name in ((avg_params, "avg_params"), (tokens, "tokens"),
                    (final_params, "final_params"), (inference_tokens, "inference_tokens")):
        check_positive(v, name, strict=False)
    return (TRAIN_FLOPS_PER_PARAM_TOKEN * avg_params * tokens
            + INFERENCE_FLOPS_PER_PARAM_TOKEN * final_params * inference_tokens)


def tokens_for_loss(fit, avg_params, target_loss):
    """Tokens ``D`` with ``L(avg_params, D) = target_loss`` (inf when unreachable)."""
    gap = target_loss - fit.E - fit.A / avg_params ** fit.alpha
    if gap <= 0:
        return math.inf
    return (fit.B / gap) ** (1 / fit.beta)


def golden_section(f, lo, hi, xtol=1e-12, max_iter=500):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def _check_target(fit, target_loss):
    check_positive(target_loss, "target_loss")
    if target_loss <= fit.E:
        raise InfeasibleError(
            f"target loss {target_loss} is not above the irreducible loss E={fit.E}",
            constraint="target_loss")


def _solve(fit, target_loss, inference_tokens, compression):
    _check_target(fit, target_loss)
    # below this size the target is unreachable with any amount of data
    log_n_min = math.log(fit.A / (target_loss - fit.E)) / fit.alpha

    def objective(log_n):
        n = math.exp(log_n)
        d = tokens_for_loss(fit, n, target_loss)
        return (TRAIN_FLOPS_PER_PARAM_TOKEN * n * d
                + INFERENCE_FLOPS_PER_PARAM_TOKEN * (n / compression) * inference_tokens)

    lo = log_n_min + 1e-9
    log_n, _ = golden_section(objective, lo, lo + _LOG_SPAN)
    return math.exp(log_n)


def _prescription(fit, target_loss, n, inference_tokens, sparsity, compression):
    d = tokens_for_loss(fit, n, target_loss)
    n_final = n / compression
    train = TRAIN_FLOPS_PER_PARAM_TOKEN * n * d
    infer = INFERENCE_FLOPS_PER_PARAM_TOKEN * n_final * inference_tokens
    return Prescription(avg_params=n, final_params=n_final, tokens=d, sparsity=sparsity,
                        compression=compression, inference_tokens=inference_tokens,
                        train_flops=train, inference_flops=infer,
                        lifetime_flops=train + infer, target_loss=target_loss,
                        achieved_loss=predict_loss(fit, n, d))


def solve_chinchilla(fit=HOFFMANN_FIT, target_loss=1.89, inference_tokens=0.0):
    """Training-compute-optimal dense ``(N, D)`` reaching ``target_loss``.

    ``inference_tokens`` only affects the reported inference/lifetime FLOPs,
    not the optimum.
    """
    n = _solve(fit, target_loss, 0.0, 1.0)
    return _prescription(fit, target_loss, n, inference_tokens, 0.0, 1.0)


def canonical_compression_rate(sparsity, steps_per_iteration=100):
    """Compression rate of the 25/50/25 schedule at ``sparsity``.

    Evaluated on a large prunable-only model so rounding is negligible.
    """
    check_fraction(sparsity, "sparsity", closed_right=False)
    if sparsity == 0:
        return 1.0
    shape = ModelShape(10 ** 9, 0)
    # enough compute for ~1000 pruning iterations of the given length
    compute = 6 * shape.total_params * steps_per_iteration * 2000 * 2
    traj = build_schedule(canonical_config(shape, compute, target_sparsity=sparsity,
                                           steps_per_iteration=steps_per_iteration))
    return compression_rate(traj)


def solve_lifetime(fit=HOFFMANN_FIT, target_loss=1.89, inference_tokens=0.0, sparsity=0.0,
                   compression=None, schedule=None):
    """Lifetime-compute-optimal prescription at ``target_loss``.

    Minimizes ``6 N D + 2 (N / r) T_inf`` subject to ``L(N, D) = target_loss``.
    The compression rate ``r`` is taken from ``compression``, else from
    ``schedule`` (a :class:`~sparsescale.core.SparsityScheduleConfig`), else
    from the canonical schedule at ``sparsity``.
    """
    check_positive(inference_tokens, "inference_tokens", strict=False)
    check_fraction(sparsity, "sparsity", closed_right=False)
    if compression is None:
        if schedule is not None:
            compression = compression_rate(build_schedule(schedule))
            sparsity = schedule.target_sparsity
        else:
            compression = canonical_compression_rate(sparsity)
    compression = check_positive(compression, "compression")
    if compression < 1:
        raise ValueError(f"compression must be >= 1, got {compression}")
    n = _solve(fit, target_loss, inference_tokens, compression)
    return _prescription(fit, target_loss, n, inference_tokens, sparsity, compression)


def lifetime_saving(sparse, dense):
    """Fractional lifetime-FLOPs saving of ``sparse`` relative to ``dense``."""
    return 1.0 - sparse.lifetime_flops / dense.lifetime_flops
