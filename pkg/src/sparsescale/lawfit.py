"""Fitting the average-parameter scaling law and the final-sparsity comparison law.

The unified law predicts final loss from the average active parameter count
``N`` and the total token count ``D``::

    L = A / N**alpha + B / D**beta + E

It is fit in log space (``A = exp(a)``, ``B = exp(b)``, ``E = exp(e)``) with a
log-sum-exp predictor and a Huber loss on log-loss residuals, minimized by
L-BFGS from many random starts. :class:`UnifiedScalingLaw` and
:class:`FrantarScalingLaw` expose this as scikit-learn regressors; the module
functions :func:`fit`, :func:`fit_frantar`, :func:`predict_loss` and
:func:`huber_objective` work on :class:`~sparsescale.core.RunRecord` lists.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConvergenceError, IllPosedError

HUBER_DELTA = 1e-3

# Uniform initialization box for (a, b, e, alpha, beta).
INIT_BOUNDS = {
    "a": (0.0, 30.0),
    "b": (0.0, 30.0),
    "e": (-2.0, 2.0),
    "alpha": (0.0, 2.0),
    "beta": (0.0, 2.0),
}

# Initialization box for the final-sparsity law, in its fitting coordinates
# (log a_S, b_S, log c_S, b_N, log a_D, b_D, log c).
FRANTAR_INIT_BOUNDS = {
    "log_a_s": (0.0, 15.0),
    "b_s": (0.0, 3.0),
    "log_c_s": (0.0, 15.0),
    "b_n": (0.0, 1.0),
    "log_a_d": (0.0, 40.0),
    "b_d": (0.0, 1.0),
    "log_c": (-2.0, 2.0),
}


@dataclass(frozen=True)
class ScalingLawFit:
    A: float
    B: float
    E: float
    alpha: float
    beta: float
    objective_value: float = 0.0
    n_starts_converged: int = 0
    n_starts: int = 0

    @classmethod
    def from_log_params(cls, theta, **diagnostics):
        a, b, e, alpha, beta = (float(v) for v in theta)
        return cls(float(np.exp(a)), float(np.exp(b)), float(np.exp(e)), alpha, beta,
                   **diagnostics)

    @property
    def log_params(self):
        return np.array([np.log(self.A), np.log(self.B), np.log(self.E),
                         self.alpha, self.beta])

    def predict(self, avg_params, tokens):
        return predict_loss(self, avg_params, tokens)

    def predict_record(self, record):
        return float(predict_loss(self, record.avg_params, record.total_tokens))

    def to_dict(self):
        return asdict(self)


# Published dense fit used as the default for prescription reproduction.
HOFFMANN_FIT = ScalingLawFit(A=406.4, B=410.7, E=1.69, alpha=0.34, beta=0.28)


@dataclass(frozen=True)
class FrantarLawFit:
    a_s: float
    b_s: float
    c_s: float
    b_n: float
    a_d: float
    b_d: float
    c: float
    objective_value: float = 0.0
    n_starts_converged: int = 0
    n_starts: int = 0
    fixed_sparsity_factor: bool = False

    def predict(self, sparsity, final_params, tokens):
        s = np.asarray(sparsity, dtype=float)
        n = np.asarray(final_params, dtype=float)
        d = np.asarray(tokens, dtype=float)
        factor = self.a_s * (1 - s) ** self.b_s + self.c_s
        return factor * (1 / n) ** self.b_n + (self.a_d / d) ** self.b_d + self.c

    def predict_record(self, record):
        nz = record.final_nonzero_params
        if nz is None:
            raise ValueError(f"record {record.label!r} has no final_nonzero_params")
        return float(self.predict(record.sparsity, nz, record.total_tokens))

    def to_dict(self):
        return asdict(self)


def predict_loss(fit, avg_params, tokens):
    """``A / N**alpha + B / D**beta + E``; works elementwise on arrays."""
    n = np.asarray(avg_params, dtype=float)
    d = np.asarray(tokens, dtype=float)
    out = fit.A / n ** fit.alpha + fit.B / d ** fit.beta + fit.E
    return float(out) if out.ndim == 0 else out


def huber(residuals, delta=HUBER_DELTA):
    r = np.asarray(residuals, dtype=float)
    abs_r = np.abs(r)
    return np.where(abs_r <= delta, 0.5 * r ** 2, delta * (abs_r - 0.5 * delta))


def _huber_grad(r, delta):
    return np.clip(r, -delta, delta)


def _log_predict(theta, log_n, log_d):
    a, b, e, alpha, beta = theta
    terms = np.stack([a - alpha * log_n, b - beta * log_d, np.full_like(log_n, e)])
    return logsumexp(terms, axis=0), terms


def _unified_objective(theta, log_n, log_d, log_l, delta):
    pred, terms = _log_predict(theta, log_n, log_d)
    r = pred - log_l
    value = huber(r, delta).sum()
    g = _huber_grad(r, delta)
    w = softmax(terms, axis=0)
    grad = np.array([
        np.dot(g, w[0]),
        np.dot(g, w[1]),
        np.dot(g, w[2]),
        -np.dot(g, w[0] * log_n),
        -np.dot(g, w[1] * log_d),
    ])
    return value, grad


def _check_records(records):
    records = list(records)
    if not records:
        raise IllPosedError("dataset is empty")
    for r in records:
        if r.final_loss <= 0:
            raise ValueError(f"non-positive loss in record {r.label!r}")
    return records


def huber_objective(params, dataset, delta=HUBER_DELTA):
    """Huber loss of log-loss residuals for the unified law.

    ``params`` is either a :class:`ScalingLawFit` or the log-space vector
    ``(a, b, e, alpha, beta)``.
    """
    records = _check_records(dataset)
    theta = params.log_params if isinstance(params, ScalingLawFit) else np.asarray(params, float)
    n = np.array([r.avg_params for r in records], dtype=float)
    d = np.array([r.total_tokens for r in records], dtype=float)
    loss = np.array([r.final_loss for r in records], dtype=float)
    if np.any(loss <= 0):
        raise ValueError("losses must be positive")
    value, _ = _unified_objective(theta, np.log(n), np.log(d), np.log(loss), delta)
    return float(value)


def _sample_starts(bounds, n_starts, seed):
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds.values()])
    hi = np.array([b[1] for b in bounds.values()])
    return lo + (hi - lo) * rng.random((n_starts, len(lo)))


def _run_start(objective, x0, args, max_iter, fixed=None):
    res = minimize(objective, x0, args=args, jac=True, method="L-BFGS-B",
                   bounds=fixed,
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-12,
                            "maxcor": 20})
    value = float(res.fun) if np.isfinite(res.fun) else np.inf
    return value, np.asarray(res.x, dtype=float), bool(res.success)


def _multistart(objective, starts, args, max_iter, n_jobs=None, fixed=None):
    """Run every start; pick the lowest objective, earliest index on ties."""
    if n_jobs is not None and n_jobs != 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_start)(objective, x0, args, max_iter, fixed) for x0 in starts)
    else:
        results = [_run_start(objective, x0, args, max_iter, fixed) for x0 in starts]
    values = np.array([r[0] for r in results])
    best = int(np.argmin(values))  # argmin returns the first minimum
    converged = sum(r[2] for r in results)
    return results[best], values, converged


class UnifiedScalingLaw(RegressorMixin, BaseEstimator):
    """Average-parameter scaling law as a scikit-learn regressor.

    ``X`` has two columns, average active parameters and total tokens; ``y``
    is the final evaluation loss.

    Parameters
    ----------
    n_starts : int, default=100
        Random initializations drawn uniformly from :data:`INIT_BOUNDS`.
    max_iter : int, default=1000
        L-BFGS iteration limit per start.
    delta : float, default=1e-3
        Huber threshold on log-loss residuals.
    random_state : int, default=0
    n_jobs : int or None
        Run starts in parallel with joblib; the result does not depend on it.

    Attributes
    ----------
    fit_ : ScalingLawFit
    start_objectives_ : ndarray of shape (n_starts,)
        Final objective of every start.
    """

    def __init__(self, n_starts=100, max_iter=1000, delta=HUBER_DELTA, random_state=0,
                 n_jobs=None):
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.delta = delta
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"X must have 2 columns (avg_params, tokens), got {X.shape[1]}")
        if np.any(X <= 0) or np.any(y <= 0):
            raise ValueError("parameters, tokens and losses must be positive")
        if np.unique(X[:, 0]).size < 2 or np.unique(X[:, 1]).size < 2:
            raise IllPosedError(
                "need at least 2 distinct parameter counts and 2 distinct token counts")
        if X.shape[0] < 5:
            raise IllPosedError(f"need at least 5 records for 5 free parameters, got {X.shape[0]}")
        args = (np.log(X[:, 0]), np.log(X[:, 1]), np.log(y), self.delta)
        starts = _sample_starts(INIT_BOUNDS, self.n_starts, self.random_state)
        (value, theta, _), values, converged = _multistart(
            _unified_objective, starts, args, self.max_iter, self.n_jobs)
        diagnostics = dict(objective_value=value, n_starts_converged=converged,
                           n_starts=self.n_starts)
        if converged == 0:
            raise ConvergenceError("no L-BFGS start converged",
                                   best=ScalingLawFit.from_log_params(theta, **diagnostics))
        self.fit_ = ScalingLawFit.from_log_params(theta, **diagnostics)
        self.start_objectives_ = values
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X, dtype=float)
        return predict_loss(self.fit_, X[:, 0], X[:, 1])


def _frantar_log_predict(theta, log1m_s, log_n, log_d, fixed_factor):
    log_a_s, b_s, log_c_s, b_n, log_a_d, b_d, log_c = theta
    if fixed_factor:
        log_factor = np.full_like(log_n, log_c_s)
        w_s = np.zeros_like(log_n)
    else:
        u = log_a_s + b_s * log1m_s
        log_factor = np.logaddexp(u, log_c_s)
        w_s = np.exp(u - log_factor)
    t1 = log_factor - b_n * log_n
    t2 = b_d * (log_a_d - log_d)
    t3 = np.full_like(log_n, log_c)
    terms = np.stack([t1, t2, t3])
    return logsumexp(terms, axis=0), terms, w_s


def _frantar_objective(theta, log1m_s, log_n, log_d, log_l, delta, fixed_factor):
    pred, terms, w_s = _frantar_log_predict(theta, log1m_s, log_n, log_d, fixed_factor)
    r = pred - log_l
    value = huber(r, delta).sum()
    g = _huber_grad(r, delta)
    w = softmax(terms, axis=0)
    gw1 = g * w[0]
    grad = np.array([
        np.dot(gw1, w_s),
        np.dot(gw1, w_s * log1m_s),
        np.dot(gw1, 1 - w_s),
        -np.dot(gw1, log_n),
        np.dot(g * w[1], np.full_like(log_n, theta[5])),
        np.dot(g * w[1], theta[4] - log_d),
        np.dot(g, w[2]),
    ])
    if fixed_factor:
        grad[0] = grad[1] = 0.0
    return value, grad


class FrantarScalingLaw(RegressorMixin, BaseEstimator):
    """Final-sparsity scaling law ``(a_S (1-S)^b_S + c_S) N^-b_N + (a_D/D)^b_D + c``.

    ``X`` columns are sparsity, final non-zero parameter count and tokens.
    Fit with the same Huber/multi-start machinery as :class:`UnifiedScalingLaw`.

    With a single sparsity level the sparsity parameters are not identified
    and fitting raises :class:`IllPosedError`, unless
    ``fix_sparsity_factor=True``: then ``a_S`` is pinned to zero and the
    factor collapses to the constant ``c_S`` (on dense-only data this is the
    dense law).
    """

    def __init__(self, n_starts=100, max_iter=1000, delta=HUBER_DELTA, random_state=0,
                 fix_sparsity_factor=False, n_jobs=None):
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.delta = delta
        self.random_state = random_state
        self.fix_sparsity_factor = fix_sparsity_factor
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 3:
            raise ValueError(f"X must have 3 columns (sparsity, final_params, tokens), "
                             f"got {X.shape[1]}")
        s, n, d = X.T
        if np.any((s < 0) | (s >= 1)):
            raise ValueError("sparsity must lie in [0, 1)")
        if np.any(n <= 0) or np.any(d <= 0) or np.any(y <= 0):
            raise ValueError("parameters, tokens and losses must be positive")
        if np.unique(n).size < 2 or np.unique(d).size < 2:
            raise IllPosedError(
                "need at least 2 distinct parameter counts and 2 distinct token counts")
        fixed = bool(self.fix_sparsity_factor)
        if np.unique(s).size < 2 and not fixed:
            raise IllPosedError(
                "a single sparsity level cannot identify the sparsity parameters "
                "(a_S, b_S); pass fix_sparsity_factor=True to collapse the factor")
        n_free = 5 if fixed else 7
        if X.shape[0] < n_free:
            raise IllPosedError(f"need at least {n_free} records, got {X.shape[0]}")
        args = (np.log1p(-s), np.log(n), np.log(d), np.log(y), self.delta, fixed)
        starts = _sample_starts(FRANTAR_INIT_BOUNDS, self.n_starts, self.random_state)
        bounds = None
        if fixed:
            starts[:, 0] = 0.0
            starts[:, 1] = 0.0
            bounds = [(0.0, 0.0), (0.0, 0.0)] + [(None, None)] * 5
        (value, theta, _), values, converged = _multistart(
            _frantar_objective, starts, args, self.max_iter, self.n_jobs, bounds)
        log_a_s, b_s, log_c_s, b_n, log_a_d, b_d, log_c = theta
        fit = FrantarLawFit(
            a_s=0.0 if fixed else float(np.exp(log_a_s)), b_s=float(b_s),
            c_s=float(np.exp(log_c_s)), b_n=float(b_n), a_d=float(np.exp(log_a_d)),
            b_d=float(b_d), c=float(np.exp(log_c)), objective_value=value,
            n_starts_converged=converged, n_starts=self.n_starts,
            fixed_sparsity_factor=fixed)
        if converged == 0:
            raise ConvergenceError("no L-BFGS start converged", best=fit)
        self.fit_ = fit
        self.start_objectives_ = values
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X, dtype=float)
        return self.fit_.predict(X[:, 0], X[:, 1], X[:, 2])


def records_to_xy(records):
    records = _check_records(records)
    X = np.array([[r.avg_params, r.total_tokens] for r in records], dtype=float)
    y = np.array([r.final_loss for r in records], dtype=float)
    return X, y


def frantar_xy(records):
    records = _check_records(records)
    rows = []
    for r in records:
        n = r.final_nonzero_params
        if n is None:
            raise ValueError(f"record {r.label!r} has no final non-zero parameter count")
        rows.append([r.sparsity, n, r.total_tokens])
    return np.array(rows, dtype=float), np.array([r.final_loss for r in records], dtype=float)


def fit(dataset, starts=100, max_iterations=1000, seed=0, delta=HUBER_DELTA, n_jobs=None):
    """Fit the unified law to a list of run records; see :class:`UnifiedScalingLaw`."""
    X, y = records_to_xy(dataset)
    est = UnifiedScalingLaw(n_starts=starts, max_iter=max_iterations, delta=delta,
                            random_state=seed, n_jobs=n_jobs).fit(X, y)
    return est.fit_


def fit_frantar(dataset, starts=100, max_iterations=1000, seed=0, delta=HUBER_DELTA,
                fix_sparsity_factor=False, n_jobs=None):
    """Fit the final-sparsity law to run records; see :class:`FrantarScalingLaw`."""
    X, y = frantar_xy(dataset)
    est = FrantarScalingLaw(n_starts=starts, max_iter=max_iterations, delta=delta,
                            random_state=seed, fix_sparsity_factor=fix_sparsity_factor,
                            n_jobs=n_jobs).fit(X, y)
    return est.fit_


def frantar_objective(fit_result, dataset, delta=HUBER_DELTA):
    """Huber objective of a :class:`FrantarLawFit` on ``dataset``."""
    X, y = frantar_xy(dataset)
    pred = fit_result.predict(X[:, 0], X[:, 1], X[:, 2])
    return float(huber(np.log(pred) - np.log(y), delta).sum())
