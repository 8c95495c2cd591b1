"""CSV and SVG emission for sweeps, fits, prescriptions and trajectories."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .exceptions import SchemaError  # noqa: E402

REQUIRED = {
    "schedule_sweep": ("f_dense", "f_prune", "sparsity", "duration", "final_loss"),
    "lr_bs_sweep": ("learning_rate", "batch_size", "final_loss"),
    "fit": ("actual", "predicted"),
    "prescription": ("name", "avg_params", "final_params", "tokens", "lifetime_flops"),
    "trajectory": ("segment_index", "active_params", "tokens"),
}
KINDS = tuple(REQUIRED)


def _check(rows, kind):
    if kind not in REQUIRED:
        raise ValueError(f"unknown report kind {kind!r}; choose from {KINDS}")
    rows = [r for r in rows if r.get("status", "ok") == "ok"]
    if not rows:
        raise SchemaError(f"no rows for a {kind} report")
    for col in REQUIRED[kind]:
        for r in rows:
            if col not in r or r[col] is None:
                raise SchemaError(f"{kind} report: missing column {col!r}", column=col)
    return rows


def _write_csv(rows, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _columns(rows, first):
    extra = sorted({k for r in rows for k in r} - set(first))
    return list(first) + extra


def _with_deltas(rows, group_keys):
    """Attach ``delta_to_best``: loss minus the best loss in the row's group."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for r in rows:
        best = min(g["final_loss"] for g in groups[tuple(r[k] for k in group_keys)])
        out.append({**r, "delta_to_best": r["final_loss"] - best})
    return out


def _schedule_sweep(rows, stem):
    rows = sorted(rows, key=lambda r: (r["sparsity"], r["duration"], r["f_dense"], r["f_prune"]))
    rows = _with_deltas(rows, ("sparsity", "duration"))
    _write_csv(rows, _columns(rows, REQUIRED["schedule_sweep"] + ("delta_to_best",)),
               stem.with_suffix(".csv"))

    groups = sorted({(r["sparsity"], r["duration"]) for r in rows})
    pairs = sorted({(r["f_dense"], r["f_prune"]) for r in rows})
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(pairs) * len(groups) ** 0.5), 4))
    width = 0.8 / len(groups)
    x = np.arange(len(pairs))
    for gi, (s, t) in enumerate(groups):
        lookup = {(r["f_dense"], r["f_prune"]): r["delta_to_best"] for r in rows
                  if (r["sparsity"], r["duration"]) == (s, t)}
        ax.bar(x + gi * width, [lookup.get(p, np.nan) for p in pairs], width,
               label=f"S={s:g}, x{t:g}")
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([f"{d:g}/{p:g}" for d, p in pairs], rotation=45, ha="right")
    ax.set_xlabel("dense / pruning compute fraction")
    ax.set_ylabel("loss above best in group")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".svg"))
    plt.close(fig)

    lines = []
    for s, t in groups:
        grp = [r for r in rows if (r["sparsity"], r["duration"]) == (s, t)]
        best = min(grp, key=lambda r: r["final_loss"])
        others = ", ".join(f"{r['f_dense']:g}/{r['f_prune']:g}:+{r['delta_to_best']:.4f}"
                           for r in grp if r is not best)
        lines.append(f"best S={s:g} x{t:g}: f_dense={best['f_dense']:g} "
                     f"f_prune={best['f_prune']:g} loss={best['final_loss']:.4f}"
                     + (f" | deltas {others}" if others else ""))
    return lines


def _lr_bs_sweep(rows, stem):
    rows = _with_deltas(rows, ())
    rows = sorted(rows, key=lambda r: (r["learning_rate"], r["batch_size"]))
    _write_csv(rows, _columns(rows, REQUIRED["lr_bs_sweep"] + ("delta_to_best",)),
               stem.with_suffix(".csv"))
    lrs = sorted({r["learning_rate"] for r in rows})
    bss = sorted({r["batch_size"] for r in rows})
    grid = np.full((len(lrs), len(bss)), np.nan)
    for r in rows:
        grid[lrs.index(r["learning_rate"]), bss.index(r["batch_size"])] = r["final_loss"]
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", cmap="viridis_r")
    for i in range(len(lrs)):
        for j in range(len(bss)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", fontsize=8,
                        color="white")
    ax.set_xticks(range(len(bss)), [f"{b:g}" for b in bss])
    ax.set_yticks(range(len(lrs)), [f"{v:g}" for v in lrs])
    ax.set_xlabel("batch size (tokens)")
    ax.set_ylabel("learning rate")
    fig.colorbar(im, ax=ax, label="final loss")
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".svg"))
    plt.close(fig)
    best = min(rows, key=lambda r: r["final_loss"])
    others = ", ".join(f"lr={r['learning_rate']:g}/bs={r['batch_size']:g}:+{r['delta_to_best']:.4f}"
                       for r in rows if r is not best)
    return [f"best: lr={best['learning_rate']:g} batch={best['batch_size']:g} "
            f"loss={best['final_loss']:.4f}" + (f" | deltas {others}" if others else "")]


def _fit(rows, stem):
    _write_csv(rows, _columns(rows, REQUIRED["fit"]), stem.with_suffix(".csv"))
    actual = np.array([r["actual"] for r in rows], dtype=float)
    pred = np.array([r["predicted"] for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    lo, hi = min(actual.min(), pred.min()), max(actual.max(), pred.max())
    pad = 0.05 * (hi - lo or 1.0)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=1, label="y = x")
    ax.scatter(actual, pred, s=18)
    ax.set_xlabel("actual loss")
    ax.set_ylabel("predicted loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".svg"))
    plt.close(fig)
    err = np.abs(pred - actual)
    worst = int(err.argmax())
    return [f"fit: mean |pred - actual| = {err.mean():.4g}, max = {err.max():.4g} "
            f"(row {worst})"]


def _prescription(rows, stem):
    best_flops = min(r["lifetime_flops"] for r in rows)
    rows = [{**r, "delta_to_best": r["lifetime_flops"] / best_flops - 1} for r in rows]
    _write_csv(rows, _columns(rows, REQUIRED["prescription"] + ("delta_to_best",)),
               stem.with_suffix(".csv"))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([r["name"] for r in rows], [r["lifetime_flops"] for r in rows])
    ax.set_ylabel("lifetime FLOPs")
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".svg"))
    plt.close(fig)
    best = min(rows, key=lambda r: r["lifetime_flops"])
    others = ", ".join(f"{r['name']}:+{100 * r['delta_to_best']:.1f}%"
                       for r in rows if r is not best)
    return [f"best: {best['name']} lifetime={best['lifetime_flops']:.4g} FLOPs"
            + (f" | deltas {others}" if others else "")]


def _trajectory(rows, stem):
    rows = sorted(rows, key=lambda r: int(r["segment_index"]))
    _write_csv(rows, _columns(rows, REQUIRED["trajectory"]), stem.with_suffix(".csv"))
    n = np.array([float(r["active_params"]) for r in rows])
    d = np.array([float(r["tokens"]) for r in rows])
    edges = np.concatenate([[0.0], np.cumsum(d)])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.stairs(n, edges)
    avg = float(n @ d / d.sum())
    ax.axhline(avg, color="k", ls="--", lw=1, label=f"average {avg:.4g}")
    ax.set_xlabel("tokens")
    ax.set_ylabel("active parameters")
    ax.legend()
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".svg"))
    plt.close(fig)
    return [f"trajectory: {len(rows)} segments, average params {avg:.6g}, "
            f"final {n[-1]:.6g}, compression {avg / n[-1]:.4f}"]


_EMITTERS = {"schedule_sweep": _schedule_sweep, "lr_bs_sweep": _lr_bs_sweep, "fit": _fit,
             "prescription": _prescription, "trajectory": _trajectory}


def report(results, kind, out_dir, name=None):
    """Write ``<name>.csv``, ``<name>.svg`` and ``<name>.txt`` for ``kind``.

    ``results`` is a list of dict rows (sweep store rows, fit-report points,
    prescription rows or trajectory rows). Rows with a non-``ok`` status are
    ignored. Returns ``{"csv", "svg", "summary", "lines"}``.

    Raises :class:`SchemaError` when there are no rows or a required column
    is missing.
    """
    rows = _check(list(results), kind)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / (name or kind)
    lines = _EMITTERS[kind](rows, stem)
    summary = stem.with_suffix(".txt")
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"csv": stem.with_suffix(".csv"), "svg": stem.with_suffix(".svg"),
            "summary": summary, "lines": lines}
