import csv

import numpy as np
import pytest

from sparsescale.core import ModelShape, build_schedule, canonical_config, trajectory_rows
from sparsescale.exceptions import SchemaError
from sparsescale.io import fit_report
from sparsescale.lawfit import fit
from sparsescale.report import KINDS, report
from sparsescale.sweep import SweepGrid, run_sweep


def _csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("kind", KINDS)
def test_empty_results_raise(tmp_path, kind):
    with pytest.raises(SchemaError):
        report([], kind, tmp_path)


def test_missing_column_is_named(tmp_path):
    rows = [{"f_dense": 0.25, "f_prune": 0.5, "sparsity": 0.8, "final_loss": 3.0}]
    with pytest.raises(SchemaError) as exc:
        report(rows, "schedule_sweep", tmp_path)
    assert exc.value.column == "duration"
    assert "duration" in str(exc.value)


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        report([{"a": 1}], "histogram", tmp_path)


def test_schedule_sweep_rows_and_summary(tmp_path):
    grid = SweepGrid(durations=(10.0,))
    res = run_sweep(grid, "theorysim", tmp_path / "s.jsonl")
    out = report(res.rows, "schedule_sweep", tmp_path)
    rows = _csv_rows(out["csv"])
    assert len(rows) == 40
    assert out["svg"].read_text().lstrip().startswith("<?xml")
    assert len(out["lines"]) == 4
    assert all(line.startswith("best S=") and "deltas" in line for line in out["lines"])
    for s in grid.sparsities:
        deltas = [float(r["delta_to_best"]) for r in rows if float(r["sparsity"]) == s]
        assert min(deltas) == 0.0 and all(d >= 0 for d in deltas)


def test_failed_rows_are_skipped(tmp_path):
    rows = [{"learning_rate": 0.1, "batch_size": 64, "final_loss": 2.0},
            {"learning_rate": 0.4, "batch_size": 64, "status": "error"}]
    out = report(rows, "lr_bs_sweep", tmp_path)
    assert len(_csv_rows(out["csv"])) == 1


def test_fit_scatter_on_diagonal(tmp_path, clean_records):
    model = fit(clean_records, starts=20, seed=0)
    points = fit_report(model, clean_records)["points"]
    out = report(points, "fit", tmp_path)
    rows = _csv_rows(out["csv"])
    actual = np.array([float(r["actual"]) for r in rows])
    pred = np.array([float(r["predicted"]) for r in rows])
    assert np.max(np.abs(actual - pred)) <= 1e-3
    assert out["svg"].exists() and out["summary"].exists()


def test_trajectory_and_prescription(tmp_path):
    traj = build_schedule(canonical_config(ModelShape(10_000), 6 * 10_000 * 100 * 40))
    rows = [dict(zip(("segment_index", "active_params", "tokens"), r))
            for r in trajectory_rows(traj)]
    out = report(rows, "trajectory", tmp_path)
    assert len(_csv_rows(out["csv"])) == len(traj.segments)
    rows = [{"name": "dense", "avg_params": 2, "final_params": 2, "tokens": 5,
             "lifetime_flops": 10.0},
            {"name": "sparse", "avg_params": 2, "final_params": 1, "tokens": 5,
             "lifetime_flops": 8.0}]
    out = report(rows, "prescription", tmp_path, name="p")
    assert out["csv"].name == "p.csv"
    assert out["lines"][0].startswith("best: sparse") and "+25.0%" in out["lines"][0]
