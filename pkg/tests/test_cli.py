import json
import subprocess
import sys

import pytest

from sparsescale.cli import main
from sparsescale.io import read_dataset, write_dataset

from conftest import synthetic_records


def run(tmp_path, *argv):
    return main(["--out-dir", str(tmp_path), *map(str, argv)])


def test_schedule_writes_stats(tmp_path, capsys):
    code = run(tmp_path, "schedule", "--prunable-params", 100_000, "--compute", 6e5 * 64 * 400,
               "--tokens-per-step", 64, "--steps-per-iteration", 10)
    assert code == 0
    stats = json.loads((tmp_path / "schedule.json").read_text())
    assert stats["final_params"] == 20_000
    assert 0.39 <= stats["avg_over_initial_prunable"] <= 0.41
    assert (tmp_path / "trajectory.csv").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("prunable_params = 100000\ntotal_compute = 1.536e10\n"
                   "tokens_per_step = 64\nsteps_per_iteration = 10\ntarget_sparsity = 0.5\n")
    assert run(tmp_path, "--config", cfg, "schedule", "--sparsity", 0.8) == 0
    stats = json.loads((tmp_path / "schedule.json").read_text())
    assert stats["final_params"] == 20_000


def test_infeasible_exit_2(tmp_path, capsys):
    code = run(tmp_path, "schedule", "--prunable-params", 10_000, "--compute", 6e5)
    assert code == 2
    assert "InfeasibleError" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["schedule", "--bogus"], ["nosuch"], ["schedule"],
                                  ["schedule", "--sparsity", "abc"]])
def test_usage_errors_exit_1(tmp_path, argv):
    try:
        code = run(tmp_path, *argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_unknown_config_key_exit_1(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("prunable_paramz = 1\n")
    assert run(tmp_path, "--config", cfg, "schedule") == 1


def test_fit_and_report(tmp_path, capsys):
    data = tmp_path / "runs.csv"
    write_dataset(synthetic_records(), data)
    assert run(tmp_path, "fit", data, "--starts", 10) == 0
    rep = json.loads((tmp_path / "fit.json").read_text())
    assert rep["max_abs_error"] < 1e-3
    assert run(tmp_path, "report", "fit", tmp_path / "fit.json") == 0
    assert (tmp_path / "fit.svg").exists()


def test_fit_ill_posed_exit_2(tmp_path):
    data = tmp_path / "runs.csv"
    write_dataset(synthetic_records()[:3], data)
    assert run(tmp_path, "fit", data, "--starts", 2) == 2


def test_fit_missing_column_exit_1(tmp_path, capsys):
    data = tmp_path / "runs.csv"
    data.write_text("avg_params,final_loss\n1,2\n")
    assert run(tmp_path, "fit", data) == 1
    assert "total_tokens" in capsys.readouterr().err


def test_prescribe(tmp_path, capsys):
    assert run(tmp_path, "prescribe", "--compression", 2.0) == 0
    out = capsys.readouterr().out
    assert "sparse saving" in out
    assert (tmp_path / "prescription.csv").exists()


def test_simulate(tmp_path):
    assert run(tmp_path, "simulate", "--prunable-params", 10 ** 6,
               "--compute", 6e6 * 1000 * 200, "--tokens-per-step", 1000) == 0
    summary = json.loads((tmp_path / "simulation.json").read_text())
    assert summary["total_delta_loss"] < 0
    assert (tmp_path / "curve.csv").exists()


def test_train_matched_dense(tmp_path, capsys):
    code = run(tmp_path, "train", "--dense-steps", 80, "--hidden-dim", 16,
               "--steps-per-iteration", 5, "--batch-size", 16, "--matched-dense",
               "--checkpoint")
    assert code == 0
    recs = read_dataset(tmp_path / "runs.csv")
    assert [r.label for r in recs] == ["sparse", "dense"]
    assert (tmp_path / "model_sparse.ckpt").exists()
    assert "relative" in capsys.readouterr().out


def test_sweep_exit_codes_and_resume(tmp_path, capsys):
    ok = tmp_path / "ok"
    assert run(ok, "sweep", "--sparsities", "0.8", "--durations", "10") == 0
    assert (ok / "schedule_sweep.csv").exists()
    assert run(ok, "sweep", "--sparsities", "0.8", "--durations", "10") == 0
    assert "0 executed, 10 already complete" in capsys.readouterr().out
    part = tmp_path / "part"
    code = run(part, "--workers", 2, "sweep", "--prunable-params", 1000,
               "--tokens-per-step", 100, "--sparsities", "0.2", "--durations", "1")
    assert code == 3
    assert run(part, "report", "schedule_sweep", part / "sweep.jsonl") == 0


def test_report_empty_exit_1(tmp_path):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert run(tmp_path, "report", "schedule_sweep", empty) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparsescale", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep" in proc.stdout
