import sys

import numpy as np
import pytest

from sparsescale.core import RunRecord
from sparsescale.lawfit import FrantarLawFit, ScalingLawFit

TRUE_FIT = ScalingLawFit(A=406.4, B=410.7, E=1.69, alpha=0.34, beta=0.28)
TRUE_FRANTAR = FrantarLawFit(a_s=2.0, b_s=1.5, c_s=30.0, b_n=0.25, a_d=4e8, b_d=0.3, c=1.6)

N_GRID = np.geomspace(1e7, 5e8, 5)
D_GRID = np.geomspace(1e9, 2e11, 6)


def synthetic_records(fit=TRUE_FIT, sigma=0.0, seed=0):
    """30 records on a 5 x 6 (N, D) grid, losses with optional log-normal noise."""
    rng = np.random.default_rng(seed)
    out = []
    for n in N_GRID:
        for d in D_GRID:
            clean = float(fit.predict(n, d))
            noisy = clean * float(np.exp(sigma * rng.standard_normal())) if sigma else clean
            out.append(RunRecord(avg_params=float(n), total_tokens=float(d), final_loss=noisy,
                                 label=f"n{n:.3g}-d{d:.3g}", meta={"clean": clean}))
    return out


def frantar_records(fit=TRUE_FRANTAR, sparsities=(0.0, 0.2, 0.4, 0.6, 0.8)):
    out = []
    for s in sparsities:
        for n in (2e7, 8e7, 3e8):
            for d in (2e9, 2e10, 2e11):
                loss = float(fit.predict(s, n, d))
                out.append(RunRecord(avg_params=n / (1 - s / 2), total_tokens=d,
                                     final_loss=loss, sparsity=s, final_params=n))
    return out


@pytest.fixture
def clean_records():
    return synthetic_records()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
