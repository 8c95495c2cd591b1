import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsescale.core import ModelShape, RunRecord, build_schedule, canonical_config
from sparsescale.exceptions import SchemaError
from sparsescale.io import (parse_config, read_config, read_dataset, read_fit_report,
                            read_trajectory_csv, schedule_from_config, write_dataset,
                            write_fit_report, write_trajectory_csv, fit_report)
from sparsescale.lawfit import HOFFMANN_FIT


def test_parse_config_types_and_comments():
    cfg = parse_config("""
# schedule
prunable_params = 1000
total_compute = 6e9    # budget
target_sparsity = 0.8
sparsities = 0.2, 0.4
optimizer = adam
""")
    assert cfg["prunable_params"] == 1000 and isinstance(cfg["prunable_params"], int)
    assert cfg["total_compute"] == 6e9
    assert cfg["sparsities"] == (0.2, 0.4)
    assert cfg["optimizer"] == "adam"
    sched = schedule_from_config(cfg)
    assert sched.shape == ModelShape(1000) and sched.target_sparsity == 0.8


@pytest.mark.parametrize("text", ["unknown_key = 1", "prunable_params = abc",
                                  "prunable_params = 1.5", "not a pair"])
def test_parse_config_rejects(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_schedule_from_config_requires_keys():
    with pytest.raises(ValueError, match="total_compute"):
        schedule_from_config({"prunable_params": 10})


def test_read_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("f_dense = 0.1\n")
    assert read_config(p) == {"f_dense": 0.1}


def test_trajectory_csv_round_trip(tmp_path):
    traj = build_schedule(canonical_config(ModelShape(5000, 40), 6 * 5040 * 100 * 30,
                                           steps_per_iteration=5))
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path, nonprunable_params=40)
    assert back.segments == traj.segments


records = st.builds(
    lambda n, d, loss, s, label: RunRecord(avg_params=n, total_tokens=d, final_loss=loss,
                                           sparsity=s, final_params=n * (1 - s) or None,
                                           label=label),
    st.floats(1, 1e12), st.floats(1, 1e15), st.floats(0.1, 10), st.floats(0, 0.95),
    st.text(alphabet="abcxyz-_ 0123", max_size=8))


@settings(max_examples=40, deadline=None)
@given(st.lists(records, min_size=1, max_size=6), st.sampled_from([".csv", ".jsonl"]))
def test_dataset_round_trip(tmp_path_factory, recs, suffix):
    path = tmp_path_factory.mktemp("ds") / ("d" + suffix)
    write_dataset(recs, path)
    back = read_dataset(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert (a.avg_params, a.total_tokens, a.final_loss, a.sparsity, a.label) == \
            (b.avg_params, b.total_tokens, b.final_loss, b.sparsity, b.label)
        assert a.final_nonzero_params == b.final_nonzero_params


def test_dataset_missing_column_named(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("avg_params,final_loss\n1,2\n")
    with pytest.raises(SchemaError) as exc:
        read_dataset(p)
    assert exc.value.column == "total_tokens"
    q = tmp_path / "d.jsonl"
    q.write_text(json.dumps({"avg_params": 1, "total_tokens": 2}) + "\n")
    with pytest.raises(SchemaError, match="final_loss"):
        read_dataset(q)
    (tmp_path / "e.csv").write_text("avg_params,total_tokens,final_loss\n")
    with pytest.raises(SchemaError):
        read_dataset(tmp_path / "e.csv")


def test_fit_report_deterministic(tmp_path, clean_records):
    rep = fit_report(HOFFMANN_FIT, clean_records, extra={"seed": 0})
    assert rep["max_abs_error"] < 1e-12
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_fit_report(rep, a)
    write_fit_report(fit_report(HOFFMANN_FIT, clean_records, extra={"seed": 0}), b)
    assert a.read_bytes() == b.read_bytes()
    assert read_fit_report(a)["parameters"] == HOFFMANN_FIT.to_dict()
