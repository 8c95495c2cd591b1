import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from sparsescale.core import ModelShape, canonical_config
from sparsescale.exceptions import InfeasibleError
from sparsescale.lawfit import HOFFMANN_FIT, ScalingLawFit
from sparsescale.prescribe import (canonical_compression_rate, golden_section, lifetime_flops,
                                   lifetime_saving, solve_chinchilla, solve_lifetime,
                                   tokens_for_loss)

T_INF = 100e12


def test_lifetime_flops_examples():
    assert lifetime_flops(70e9, 4.26e12, 70e9, T_INF) == pytest.approx(1.5789e25, rel=1e-4)
    assert lifetime_flops(28e9, 16.6e12, 14e9, T_INF) == pytest.approx(5.5888e24, rel=1e-4)
    assert lifetime_flops(3.0, 5.0, 2.0, 0.0) == 90.0


def test_chinchilla_kkt_condition():
    f = HOFFMANN_FIT
    for target in (1.85, 1.89, 2.0, 2.5):
        p = solve_chinchilla(f, target)
        lhs = f.alpha * f.A / p.avg_params ** f.alpha
        rhs = f.beta * f.B / p.tokens ** f.beta
        assert lhs == pytest.approx(rhs, rel=1e-3)
        assert abs(p.achieved_loss - target) <= 1e-4


def test_chinchilla_matches_bounded_scalar_minimizer():
    # independent route: scipy's bounded Brent on log N
    f = HOFFMANN_FIT
    target = 1.89
    lo = math.log(f.A / (target - f.E)) / f.alpha

    def flops(log_n):
        n = math.exp(log_n)
        return 6 * n * tokens_for_loss(f, n, target)

    ref = minimize_scalar(flops, bounds=(lo + 1e-6, lo + 30), method="bounded",
                          options={"xatol": 1e-10})
    p = solve_chinchilla(f, target)
    assert p.avg_params == pytest.approx(math.exp(ref.x), rel=1e-5)


def test_infeasible_target():
    with pytest.raises(InfeasibleError) as exc:
        solve_chinchilla(HOFFMANN_FIT, 1.69)
    assert exc.value.constraint == "target_loss"
    with pytest.raises(InfeasibleError):
        solve_lifetime(HOFFMANN_FIT, 1.5, T_INF, 0.8, compression=2.0)


def test_objective_unimodal_on_grid():
    f = HOFFMANN_FIT
    target = 1.89
    lo = math.log(f.A / (target - f.E)) / f.alpha
    grid = np.linspace(lo + 1e-3, lo + 20, 4000)
    for r in (1.0, 2.0):
        vals = np.array([6 * math.exp(x) * tokens_for_loss(f, math.exp(x), target)
                         + 2 * math.exp(x) / r * T_INF for x in grid])
        k = int(vals.argmin())
        assert np.all(np.diff(vals[:k + 1]) < 0)
        assert np.all(np.diff(vals[k:]) > 0)


def test_reductions():
    chin = solve_chinchilla(HOFFMANN_FIT, 1.89)
    for s, r in ((0.0, 1.0), (0.5, 1.4), (0.8, 2.0)):
        p = solve_lifetime(HOFFMANN_FIT, 1.89, 0.0, s, compression=r)
        assert p.avg_params == pytest.approx(chin.avg_params, rel=1e-8)
        assert p.tokens == pytest.approx(chin.tokens, rel=1e-8)


def test_prescription_identities():
    p = solve_lifetime(HOFFMANN_FIT, 1.89, T_INF, 0.8, compression=2.0)
    assert p.train_flops == pytest.approx(6 * p.avg_params * p.tokens)
    assert p.inference_flops == pytest.approx(2 * p.final_params * T_INF)
    assert p.lifetime_flops == pytest.approx(p.train_flops + p.inference_flops)
    assert p.final_params == pytest.approx(p.avg_params / 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.75, 2.6), st.floats(1e10, 1e15), st.floats(1.01, 4.0))
def test_sparse_dominates_dense(target, t_inf, r):
    dense = solve_lifetime(HOFFMANN_FIT, target, t_inf, 0.0)
    sparse = solve_lifetime(HOFFMANN_FIT, target, t_inf, 0.5, compression=r)
    assert sparse.lifetime_flops <= dense.lifetime_flops * (1 + 1e-9)
    assert abs(sparse.achieved_loss - target) <= 1e-4
    assert lifetime_saving(sparse, dense) >= -1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(1.75, 2.6), st.floats(1e10, 1e15), st.floats(1.5, 10))
def test_dense_size_nonincreasing_in_traffic(target, t_inf, factor):
    a = solve_lifetime(HOFFMANN_FIT, target, t_inf, 0.0)
    b = solve_lifetime(HOFFMANN_FIT, target, t_inf * factor, 0.0)
    assert b.avg_params <= a.avg_params * (1 + 1e-9)


def test_compression_from_schedule_and_canonical_default():
    r = canonical_compression_rate(0.8)
    assert 1.95 <= r <= 2.05
    shape = ModelShape(10 ** 8)
    sched = canonical_config(shape, 6 * 10 ** 8 * 100 * 4000)
    p = solve_lifetime(HOFFMANN_FIT, 1.89, T_INF, schedule=sched)
    assert p.compression == pytest.approx(r, rel=1e-3)
    assert p.sparsity == 0.8
    with pytest.raises(ValueError):
        solve_lifetime(HOFFMANN_FIT, 1.89, T_INF, 0.8, compression=0.5)


def test_golden_section_quadratic():
    x, fx = golden_section(lambda t: (t - 1.234) ** 2, -10, 10)
    assert x == pytest.approx(1.234, abs=1e-9)
    assert fx == pytest.approx(0.0, abs=1e-15)


def test_custom_constants_are_respected():
    f = ScalingLawFit(A=300.0, B=500.0, E=1.5, alpha=0.3, beta=0.3)
    p = solve_chinchilla(f, 2.0)
    # equal exponents: optimum splits the reducible loss evenly
    assert f.A / p.avg_params ** f.alpha == pytest.approx(f.B / p.tokens ** f.beta, rel=1e-6)
