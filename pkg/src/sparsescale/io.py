"""Plain-text persistence: config files, trajectories, datasets, fit reports.

Config files are ``key = value`` lines (``#`` comments allowed, no section
header needed). Recognised keys:

schedule
    prunable_params, nonprunable_params, target_sparsity, f_dense, f_prune,
    total_compute, tokens_per_step, steps_per_iteration
law / prescription
    A, B, E, alpha, beta, target_loss, inference_tokens, compression
trainer
    learning_rate, batch_size, dense_steps, hidden_dim, context, embed_dim,
    corpus, optimizer, lr_schedule, warmup_steps, eval_every
sweep
    dense_fractions, prune_fractions, sparsities, durations, lr_grid,
    batch_grid (comma-separated lists)
theory
    theory_A, theory_alpha, burn_in

Unknown keys are rejected so typos surface early.
"""

import configparser
import csv
import json
from pathlib import Path

from ._validation import check_count
from .core import ModelShape, ParamTrajectory, RunRecord, Segment, SparsityScheduleConfig
from .exceptions import SchemaError

INT_KEYS = {"prunable_params", "nonprunable_params", "tokens_per_step", "steps_per_iteration",
            "batch_size", "dense_steps", "hidden_dim", "context", "embed_dim",
            "warmup_steps", "eval_every"}
FLOAT_KEYS = {"target_sparsity", "f_dense", "f_prune", "total_compute", "A", "B", "E",
              "alpha", "beta", "target_loss", "inference_tokens", "compression",
              "learning_rate", "theory_A", "theory_alpha", "burn_in"}
STR_KEYS = {"corpus", "optimizer", "lr_schedule"}
LIST_KEYS = {"dense_fractions", "prune_fractions", "sparsities", "durations", "lr_grid",
             "batch_grid"}
CONFIG_KEYS = INT_KEYS | FLOAT_KEYS | STR_KEYS | LIST_KEYS

DATASET_FIELDS = ("label", "avg_params", "total_tokens", "final_loss", "sparsity",
                  "final_nonzero_params")
REQUIRED_DATASET_FIELDS = ("avg_params", "total_tokens", "final_loss")
TRAJECTORY_FIELDS = ("segment_index", "active_params", "tokens")


def _parse_number(text, key):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"config key {key!r}: {text!r} is not a number") from None
    return value


def parse_config(text, source="<config>"):
    """Parse key-value config text into a dict of typed values."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from None
    out = {}
    for key, raw in parser.items("config"):
        if key not in CONFIG_KEYS:
            raise ValueError(f"{source}: unknown config key {key!r}")
        raw = raw.strip()
        if key in INT_KEYS:
            value = _parse_number(raw, key)
            try:
                out[key] = check_count(value, key)
            except TypeError as exc:
                raise ValueError(f"{source}: {exc}") from None
        elif key in FLOAT_KEYS:
            out[key] = _parse_number(raw, key)
        elif key in LIST_KEYS:
            out[key] = tuple(_parse_number(v, key) for v in raw.split(",") if v.strip())
        else:
            out[key] = raw
    return out


def read_config(path):
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def schedule_from_config(cfg):
    """Build a :class:`SparsityScheduleConfig` from parsed config values."""
    missing = [k for k in ("prunable_params", "total_compute") if k not in cfg]
    if missing:
        raise ValueError(f"config is missing required schedule key(s): {', '.join(missing)}")
    shape = ModelShape(cfg["prunable_params"], cfg.get("nonprunable_params", 0))
    return SparsityScheduleConfig(
        shape, cfg.get("target_sparsity", 0.8), cfg.get("f_dense", 0.25),
        cfg.get("f_prune", 0.5), cfg["total_compute"],
        tokens_per_step=cfg.get("tokens_per_step", 1),
        steps_per_iteration=cfg.get("steps_per_iteration", 100))


def write_trajectory_csv(traj, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_FIELDS + ("phase",))
        for i, s in enumerate(traj.segments):
            w.writerow((i, s.active_params, s.tokens, s.phase))


def read_trajectory_csv(path, nonprunable_params=0, tokens_per_step=1):
    rows = _read_csv(path, TRAJECTORY_FIELDS)
    rows.sort(key=lambda r: int(r["segment_index"]))
    segs = tuple(Segment(int(r["active_params"]), int(r["tokens"]), r.get("phase") or "dense")
                 for r in rows)
    return ParamTrajectory(segs, nonprunable_params=nonprunable_params,
                           tokens_per_step=tokens_per_step)


def _read_csv(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}", column=col)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no rows")
    return rows


def record_to_row(rec):
    nz = rec.final_nonzero_params
    return {"label": rec.label, "avg_params": rec.avg_params,
            "total_tokens": rec.total_tokens, "final_loss": rec.final_loss,
            "sparsity": rec.sparsity, "final_nonzero_params": nz}


def row_to_record(row, source="measured"):
    for col in REQUIRED_DATASET_FIELDS:
        if row.get(col) in (None, ""):
            raise SchemaError(f"record is missing {col!r}", column=col)
    nz = row.get("final_nonzero_params")
    return RunRecord(avg_params=float(row["avg_params"]),
                     total_tokens=float(row["total_tokens"]),
                     final_loss=float(row["final_loss"]),
                     sparsity=float(row.get("sparsity") or 0.0),
                     final_params=float(nz) if nz not in (None, "") else None,
                     label=str(row.get("label") or ""), source=source)


def write_dataset(records, path):
    """Write records as CSV, or as JSON lines when the suffix is .jsonl."""
    path = Path(path)
    rows = [record_to_row(r) for r in records]
    if path.suffix == ".jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=DATASET_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def read_dataset(path):
    """Read a CSV or JSON-lines dataset into :class:`RunRecord` objects."""
    path = Path(path)
    if path.suffix == ".jsonl":
        rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
                if line.strip()]
        if not rows:
            raise SchemaError(f"{path}: no rows")
        for col in REQUIRED_DATASET_FIELDS:
            if any(col not in r for r in rows):
                raise SchemaError(f"{path}: missing column {col!r}", column=col)
    else:
        rows = _read_csv(path, REQUIRED_DATASET_FIELDS)
    return [row_to_record(r) for r in rows]


def fit_report(fit, records=None, extra=None):
    """Structured fit report: parameters, diagnostics and per-record predictions."""
    report = {"parameters": fit.to_dict()}
    if records is not None:
        points = []
        for r in records:
            pred = fit.predict_record(r) if hasattr(fit, "predict_record") else None
            points.append({"label": r.label, "avg_params": r.avg_params,
                           "total_tokens": r.total_tokens, "sparsity": r.sparsity,
                           "actual": r.final_loss, "predicted": pred})
        report["points"] = points
        errs = [abs(p["predicted"] - p["actual"]) for p in points
                if p["predicted"] is not None]
        if errs:
            report["mean_abs_error"] = sum(errs) / len(errs)
            report["max_abs_error"] = max(errs)
    if extra:
        report.update(extra)
    return report


def write_fit_report(report, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_fit_report(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
