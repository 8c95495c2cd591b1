"""``sparsescale`` command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 infeasible or ill-posed
request, 3 sweep finished with failed rows.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from .core import (average_params, build_schedule, compression_rate, effective_compute,
                   PHASES)
from .exceptions import IllPosedError, InfeasibleError, SchemaError, SingularityError
from .io import (fit_report, read_config, read_dataset, read_fit_report,
                 read_trajectory_csv, schedule_from_config, write_dataset, write_fit_report,
                 write_trajectory_csv)
from .lawfit import HOFFMANN_FIT, ScalingLawFit, fit, fit_frantar

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_PARTIAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (0)")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                   help="concurrent sweep workers (1)")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory (.)")
    p.add_argument("--config", default=argparse.SUPPRESS,
                   help="key = value config file; command-line flags take precedence")
    return p


def _schedule_flags(p):
    p.add_argument("--prunable-params", type=int)
    p.add_argument("--nonprunable-params", type=int)
    p.add_argument("--sparsity", type=float, dest="target_sparsity")
    p.add_argument("--f-dense", type=float)
    p.add_argument("--f-prune", type=float)
    p.add_argument("--compute", type=float, dest="total_compute")
    p.add_argument("--tokens-per-step", type=int)
    p.add_argument("--steps-per-iteration", type=int)


def _law_flags(p):
    for name in ("A", "B", "E", "alpha", "beta"):
        p.add_argument(f"--{name}", type=float, help="law constant (default: Hoffmann fit)")


def build_parser():
    glob = _global_flags()
    parser = _Parser(prog="sparsescale", parents=[glob],
                     description="Plan, simulate, fit and validate sparse pre-training.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schedule", parents=[glob], help="materialize a pruning schedule")
    _schedule_flags(p)

    p = sub.add_parser("fit", parents=[glob], help="fit the average-parameter law")
    p.add_argument("dataset", help="CSV or .jsonl run records")
    p.add_argument("--starts", type=int, default=100)
    p.add_argument("--max-iter", type=int, default=1000)

    p = sub.add_parser("fit-frantar", parents=[glob], help="fit the final-sparsity law")
    p.add_argument("dataset")
    p.add_argument("--starts", type=int, default=100)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--fix-sparsity-factor", action="store_true",
                   help="allow a single sparsity level by pinning a_S = 0")

    p = sub.add_parser("prescribe", parents=[glob], help="compute-optimal prescriptions")
    p.add_argument("--target-loss", type=float)
    p.add_argument("--inference-tokens", type=float)
    p.add_argument("--sparsity", type=float, dest="target_sparsity")
    p.add_argument("--compression", type=float, help="compression rate r (overrides schedule)")
    p.add_argument("--fit-report", help="take law constants from a fit report")
    _law_flags(p)

    p = sub.add_parser("simulate", parents=[glob], help="single power-law loss simulation")
    _schedule_flags(p)
    p.add_argument("--theory-A", type=float)
    p.add_argument("--theory-alpha", type=float)
    p.add_argument("--burn-in", type=float)

    p = sub.add_parser("train", parents=[glob], help="desk-scale sparse pre-training")
    p.add_argument("--sparsity", type=float, dest="target_sparsity")
    p.add_argument("--f-dense", type=float)
    p.add_argument("--f-prune", type=float)
    p.add_argument("--dense-steps", type=int, help="budget in steps of the unpruned model")
    p.add_argument("--steps-per-iteration", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--corpus", help="text file (default: bundled corpus)")
    p.add_argument("--matched-dense", action="store_true",
                   help="also train the dense model matched to the average size")
    p.add_argument("--checkpoint", action="store_true", help="write model checkpoints")

    p = sub.add_parser("sweep", parents=[glob], help="run a resumable schedule sweep")
    p.add_argument("--runner", choices=("theorysim", "trainer"), default="theorysim")
    p.add_argument("--store", help="results file (default: <out-dir>/sweep.jsonl)")
    for axis in ("dense_fractions", "prune_fractions", "sparsities", "durations", "lr_grid",
                 "batch_grid"):
        p.add_argument("--" + axis.replace("_", "-"), type=_floats, dest=axis)
    p.add_argument("--dense-steps", type=int, help="trainer runner: base budget in steps")
    p.add_argument("--hidden-dim", type=int, help="trainer runner: hidden width")
    p.add_argument("--prunable-params", type=int, help="theorysim runner: model size")
    p.add_argument("--tokens-per-step", type=int, help="theorysim runner: batch tokens")

    p = sub.add_parser("report", parents=[glob], help="render CSV and SVG reports")
    p.add_argument("kind", choices=("schedule_sweep", "lr_bs_sweep", "fit", "prescription",
                                    "trajectory"))
    p.add_argument("input", help="sweep .jsonl, fit report .json, or CSV")
    p.add_argument("--name", help="output file stem (default: kind)")
    return parser


def _merged(args):
    """Config-file values overlaid by explicitly given flags."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            cfg[key] = value
    return cfg


def _out_dir(args):
    out = Path(getattr(args, "out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _law(cfg):
    base = HOFFMANN_FIT
    if cfg.get("fit_report"):
        params = read_fit_report(cfg["fit_report"])["parameters"]
        base = ScalingLawFit(*(params[k] for k in ("A", "B", "E", "alpha", "beta")))
    return ScalingLawFit(*(cfg.get(k, getattr(base, k)) for k in ("A", "B", "E", "alpha",
                                                                   "beta")))


def _schedule_stats(traj, cfg):
    n0 = traj.initial_params
    total = effective_compute(traj)
    return {"n_iterations": traj.n_iterations, "removal_fraction": traj.removal_fraction,
            "initial_params": n0, "final_params": traj.final_params,
            "avg_params": average_params(traj),
            "avg_over_initial": average_params(traj) / n0,
            "avg_over_initial_prunable": average_params(traj, prunable_only=True)
            / cfg.shape.prunable_params,
            "compression_rate": compression_rate(traj), "total_tokens": traj.total_tokens,
            "effective_compute": total, "budget": cfg.total_compute,
            "phase_fractions": {ph: traj.phase_compute(ph) / total for ph in PHASES}}


def cmd_schedule(args, cfg, out):
    sched = schedule_from_config(cfg)
    traj = build_schedule(sched)
    write_trajectory_csv(traj, out / "trajectory.csv")
    stats = _schedule_stats(traj, sched)
    (out / "schedule.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_fit(args, cfg, out, frantar=False):
    records = read_dataset(args.dataset)
    seed = cfg.get("seed", 0)
    workers = cfg.get("workers", 1)
    if frantar:
        result = fit_frantar(records, starts=args.starts, max_iterations=args.max_iter,
                             seed=seed, fix_sparsity_factor=args.fix_sparsity_factor,
                             n_jobs=workers if workers > 1 else None)
        name = "fit_frantar.json"
    else:
        result = fit(records, starts=args.starts, max_iterations=args.max_iter, seed=seed,
                     n_jobs=workers if workers > 1 else None)
        name = "fit.json"
    rep = fit_report(result, records, extra={"seed": seed, "starts": args.starts,
                                             "dataset": str(args.dataset)})
    write_fit_report(rep, out / name)
    print(json.dumps(rep["parameters"], indent=2))
    print(f"mean |pred - actual| = {rep['mean_abs_error']:.4g}  -> {out / name}")
    return EXIT_OK


def cmd_prescribe(args, cfg, out):
    from .prescribe import lifetime_saving, solve_chinchilla, solve_lifetime
    from .report import report
    law = _law(cfg)
    target = cfg.get("target_loss", 1.89)
    t_inf = cfg.get("inference_tokens", 1e14)
    sparsity = cfg.get("target_sparsity", 0.8)
    kwargs = {}
    if "compression" in cfg:
        kwargs["compression"] = cfg["compression"]
    elif "prunable_params" in cfg and "total_compute" in cfg:
        kwargs["schedule"] = schedule_from_config(cfg)
    chin = solve_chinchilla(law, target, t_inf)
    dense = solve_lifetime(law, target, t_inf, 0.0)
    sparse = solve_lifetime(law, target, t_inf, sparsity, **kwargs)
    rows = [{"name": name, **p.to_dict()} for name, p in
            (("chinchilla", chin), ("dense_lifetime", dense), ("sparse_lifetime", sparse))]
    res = report(rows, "prescription", out, name="prescription")
    print(f"{'':16s}{'N_avg':>12s}{'N_final':>12s}{'tokens':>12s}{'lifetime FLOPs':>16s}")
    for r in rows:
        print(f"{r['name']:16s}{r['avg_params']:12.4g}{r['final_params']:12.4g}"
              f"{r['tokens']:12.4g}{r['lifetime_flops']:16.4g}")
    print(f"sparse saving vs dense lifetime-optimal: {100 * lifetime_saving(sparse, dense):.1f}%")
    print(res["lines"][0])
    return EXIT_OK


def cmd_simulate(args, cfg, out):
    from .theorysim import (DEFAULT_BURN_IN, TheoryParams, coefficient_series, curve_rows,
                            simulate_trajectory)
    from .sweep import DEFAULT_THEORY
    sched = schedule_from_config(cfg)
    traj = build_schedule(sched)
    p = TheoryParams(cfg.get("theory_A", DEFAULT_THEORY.A),
                     cfg.get("theory_alpha", DEFAULT_THEORY.alpha))
    sim = simulate_trajectory(p, traj, burn_in=cfg.get("burn_in", DEFAULT_BURN_IN))
    with open(out / "curve.csv", "w") as fh:
        fh.write("cumulative_compute,loss\n")
        for c, l in curve_rows(sim):
            fh.write(f"{c!r},{l!r}\n")
    coef = coefficient_series(p, traj, pruning_only=True)
    k = traj.n_iterations
    summary = {"total_delta_loss": sim.total_delta, "final_loss": sim.final_loss,
               "start_compute": sim.start_compute, "n_iterations": k,
               "coefficient_flatness_final_half": coef.flatness(k // 2) if k >= 2 else None}
    (out / "simulation.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_train(args, cfg, out):
    from .trainer import (make_train_config, matched_dense_config, run_sparse_pretraining,
                          save_checkpoint)
    keys = ("f_dense", "f_prune", "dense_steps", "steps_per_iteration", "hidden_dim",
            "context", "embed_dim", "learning_rate", "batch_size", "optimizer",
            "lr_schedule", "warmup_steps", "eval_every", "corpus")
    kwargs = {k: cfg[k] for k in keys if k in cfg}
    tc = make_train_config(cfg.get("target_sparsity", 0.8), seed=cfg.get("seed", 0),
                           label="sparse", **kwargs)
    results = [run_sparse_pretraining(tc)]
    if args.matched_dense:
        results.append(run_sparse_pretraining(
            matched_dense_config(tc, results[0].trajectory, label="dense")))
    write_dataset([r.record for r in results], out / "runs.csv")
    for r in results:
        tag = r.record.label
        with open(out / f"curve_{tag}.csv", "w") as fh:
            fh.write("step,active_params,train_loss\n")
            for row in r.curve_rows():
                fh.write("%d,%d,%r\n" % row)
        write_trajectory_csv(r.trajectory, out / f"trajectory_{tag}.csv")
        if args.checkpoint:
            save_checkpoint(r.model, out / f"model_{tag}.ckpt", vocab=r.vocab)
        rec = r.record
        print(f"{tag}: final eval loss {rec.final_loss:.4f}, avg params {rec.avg_params:.1f}, "
              f"final params {rec.final_params:.0f}, tokens {rec.total_tokens:.0f}, "
              f"compute {rec.meta['effective_compute']:.4g}")
    if len(results) == 2:
        s, d = results[0].record.final_loss, results[1].record.final_loss
        print(f"sparse vs matched dense: {100 * (s - d) / d:+.2f}% relative")
    return EXIT_OK


def cmd_sweep(args, cfg, out):
    from .core import ModelShape
    from .report import report
    from .sweep import SweepGrid, TheorySimRunner, TrainerRunner, run_sweep
    axes = {k: tuple(cfg[k]) for k in ("dense_fractions", "prune_fractions", "sparsities",
                                      "durations", "lr_grid", "batch_grid") if k in cfg}
    grid = SweepGrid(**axes)
    if args.runner == "trainer":
        kw = {k: cfg[k] for k in ("dense_steps", "hidden_dim", "learning_rate", "batch_size",
                                  "steps_per_iteration", "corpus") if k in cfg}
        runner = TrainerRunner(**kw)
    else:
        kw = {}
        if "prunable_params" in cfg:
            kw["shape"] = ModelShape(cfg["prunable_params"], cfg.get("nonprunable_params", 0))
        if "tokens_per_step" in cfg:
            kw["tokens_per_step"] = cfg["tokens_per_step"]
        runner = TheorySimRunner(**kw)
    store = Path(cfg.get("store") or out / "sweep.jsonl")
    res = run_sweep(grid, runner, store, global_seed=cfg.get("seed", 0),
                    workers=cfg.get("workers", 1))
    print(f"{res.executed} executed, {res.skipped} already complete, {res.failed} failed "
          f"-> {store}")
    if res.ok_rows:
        for line in report(res.ok_rows, "schedule_sweep", out)["lines"]:
            print(line)
    for r in res.rows:
        if r.get("status") != "ok":
            print(f"failed: index {r['index']}: {r.get('error')}", file=sys.stderr)
    return EXIT_PARTIAL if res.failed or len(res.ok_rows) < len(res.rows) else EXIT_OK


def _load_rows(kind, path):
    path = Path(path)
    if path.suffix == ".jsonl":
        return [json.loads(l) for l in path.read_text().splitlines() if l.strip()]
    if path.suffix == ".json":
        data = read_fit_report(path)
        return data.get("points", [])
    if kind == "trajectory":
        traj = read_trajectory_csv(path)
        return [{"segment_index": i, "active_params": s.active_params, "tokens": s.tokens}
                for i, s in enumerate(traj.segments)]
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    num = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = float(v)
            except (TypeError, ValueError):
                conv[k] = v
        num.append(conv)
    return num


def cmd_report(args, cfg, out):
    from .report import report
    res = report(_load_rows(args.kind, args.input), args.kind, out, name=args.name)
    for line in res["lines"]:
        print(line)
    print(f"-> {res['csv']}, {res['svg']}")
    return EXIT_OK


COMMANDS = {"schedule": cmd_schedule, "fit": cmd_fit,
            "fit-frantar": lambda a, c, o: cmd_fit(a, c, o, frantar=True),
            "prescribe": cmd_prescribe, "simulate": cmd_simulate, "train": cmd_train,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merged(args)
        out = _out_dir(args)
        return COMMANDS[args.command](args, cfg, out)
    except (InfeasibleError, IllPosedError, SingularityError) as exc:
        print(f"sparsescale: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SchemaError, ValueError, TypeError, OSError) as exc:
        print(f"sparsescale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
