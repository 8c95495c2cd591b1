"""Schedule sweeps: grid enumeration, runners and a resumable results store.

Every configuration gets a content hash (sha256 of its canonical JSON) that
keys both resumption and its seed, so results do not depend on the order in
which a grid lists its values. Runs may execute in worker processes, but
only the parent process appends to the store.
"""

import hashlib
import json
import os
import threading
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

from ._validation import check_fraction, check_positive
from .core import (ModelShape, PRUNE, SparsityScheduleConfig, average_params, build_schedule,
                   compression_rate, effective_compute)
from .lawfit import HOFFMANN_FIT, ScalingLawFit
from .theorysim import DEFAULT_BURN_IN, TheoryParams, coefficient_series, simulate_trajectory

SCHEMA_VERSION = 1
CHINCHILLA_TOKENS_PER_PARAM = 20
# 162M prunable parameters, a small language-model size
DEFAULT_SHAPE = ModelShape(162_000_000, 0)
# loss 3.0 at 1e19 FLOPs for alpha=0.203
DEFAULT_THEORY = TheoryParams(A=1e19 * 3.0 ** (1 / 0.203), alpha=0.203)


class EmptyGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SweepGrid:
    """Sweep axes. ``durations`` multiply the base compute budget.

    Empty ``lr_grid``/``batch_grid`` mean "runner default".
    """

    dense_fractions: tuple = (0.0, 0.25, 0.5, 0.75)
    prune_fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    sparsities: tuple = (0.2, 0.4, 0.6, 0.8)
    durations: tuple = (10.0, 20.0)
    lr_grid: tuple = ()
    batch_grid: tuple = ()

    def __post_init__(self):
        for name in ("dense_fractions", "prune_fractions", "sparsities", "durations"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"sweep axis {name} is empty")
            object.__setattr__(self, name, tuple(sorted(set(values))))
        for v in self.dense_fractions + self.prune_fractions:
            check_fraction(v, "phase fraction")
        for v in self.sparsities:
            check_fraction(v, "sparsity", closed_right=False)
        for v in self.durations:
            check_positive(v, "duration")
        object.__setattr__(self, "lr_grid",
                           tuple(sorted({check_positive(v, "learning rate")
                                         for v in self.lr_grid})))
        object.__setattr__(self, "batch_grid", tuple(sorted({int(v) for v in self.batch_grid})))

    def valid_pairs(self):
        return [(d, p) for d, p in product(self.dense_fractions, self.prune_fractions)
                if d + p <= 1 + 1e-12]


@dataclass(frozen=True)
class SweepPoint:
    f_dense: float
    f_prune: float
    sparsity: float
    duration: float
    learning_rate: float = None
    batch_size: int = None

    def canonical(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def key(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def derive_seed(global_seed, point):
    digest = hashlib.sha256(f"{int(global_seed)}|{point.canonical()}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def enumerate_points(grid):
    """Valid grid points in lexicographic axis order.

    Axis order is (f_dense, f_prune, sparsity, duration, learning_rate,
    batch_size); pairs with ``f_dense + f_prune > 1`` are dropped.
    """
    lrs = grid.lr_grid or (None,)
    batches = grid.batch_grid or (None,)
    points = [SweepPoint(d, p, s, t, lr, b)
              for (d, p), s, t, lr, b in product(grid.valid_pairs(), grid.sparsities,
                                                  grid.durations, lrs, batches)]
    if not points:
        warnings.warn("sweep grid has no valid (f_dense, f_prune) combination",
                      EmptyGridWarning, stacklevel=2)
    return points


def chinchilla_compute(shape):
    """Dense compute of a Chinchilla-optimal run (20 tokens per parameter)."""
    n = shape.total_params
    return 6 * n * CHINCHILLA_TOKENS_PER_PARAM * n


def enumerate_schedules(grid, shape=DEFAULT_SHAPE, tokens_per_step=1, steps_per_iteration=100,
                        base_compute=None):
    """Schedule configs for every valid grid point (LR and batch axes ignored).

    Each duration multiplies ``base_compute`` (default: the Chinchilla-optimal
    compute of ``shape``).
    """
    base = chinchilla_compute(shape) if base_compute is None else base_compute
    seen = []
    for pt in enumerate_points(grid):
        cfg = SparsityScheduleConfig(shape, pt.sparsity, pt.f_dense, pt.f_prune,
                                     pt.duration * base, tokens_per_step=tokens_per_step,
                                     steps_per_iteration=steps_per_iteration)
        if cfg not in seen:
            seen.append(cfg)
    return seen


@dataclass(frozen=True)
class TheorySimRunner:
    """Law-based stand-in for a training run.

    The reported loss is the unified law at the schedule's average parameter
    count and token count. The single-power-law simulator's total loss change
    and coefficient flatness are recorded alongside; at equal compute it is
    the same for every schedule, so it cannot rank them.
    """

    shape: ModelShape = DEFAULT_SHAPE
    law: ScalingLawFit = HOFFMANN_FIT
    theory: TheoryParams = DEFAULT_THEORY
    tokens_per_step: int = 2 ** 19
    steps_per_iteration: int = 100
    burn_in: float = DEFAULT_BURN_IN
    base_compute: float = None
    name = "theorysim"

    def schedule(self, point):
        base = chinchilla_compute(self.shape) if self.base_compute is None else self.base_compute
        return SparsityScheduleConfig(self.shape, point.sparsity, point.f_dense, point.f_prune,
                                      point.duration * base,
                                      tokens_per_step=point.batch_size or self.tokens_per_step,
                                      steps_per_iteration=self.steps_per_iteration)

    def __call__(self, point, seed):
        traj = build_schedule(self.schedule(point))
        n_avg = average_params(traj)
        sim = simulate_trajectory(self.theory, traj, burn_in=self.burn_in)
        coef = coefficient_series(self.theory, traj, pruning_only=True)
        n_iter = traj.n_iterations
        flat = coef.flatness(n_iter // 2) if n_iter >= 2 else 0.0
        return {"final_loss": float(self.law.predict(n_avg, traj.total_tokens)),
                "avg_params": n_avg, "total_tokens": traj.total_tokens,
                "final_params": traj.final_params,
                "compression": compression_rate(traj),
                "effective_compute": float(effective_compute(traj)),
                "n_iterations": n_iter, "theory_delta_loss": sim.total_delta,
                "theory_final_loss": sim.final_loss, "coefficient_flatness": flat}


@dataclass(frozen=True)
class TrainerRunner:
    """Real desk-scale training; ``duration`` multiplies ``dense_steps``."""

    dense_steps: int = 200
    hidden_dim: int = 64
    context: int = 8
    embed_dim: int = 16
    learning_rate: float = 0.1
    batch_size: int = 64
    steps_per_iteration: int = 100
    corpus: str = None
    name = "trainer"

    def config(self, point, seed):
        from .trainer import make_train_config
        return make_train_config(
            point.sparsity, point.f_dense, point.f_prune,
            dense_steps=max(1, int(round(point.duration * self.dense_steps))),
            batch_size=point.batch_size or self.batch_size,
            steps_per_iteration=self.steps_per_iteration, corpus=self.corpus,
            context=self.context, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            learning_rate=point.learning_rate or self.learning_rate, seed=seed)

    def __call__(self, point, seed):
        from .trainer import run_sparse_pretraining
        res = run_sparse_pretraining(self.config(point, seed), keep_model=False)
        rec = res.record
        return {"final_loss": rec.final_loss, "avg_params": rec.avg_params,
                "total_tokens": rec.total_tokens, "final_params": rec.final_params,
                "compression": compression_rate(res.trajectory),
                "effective_compute": float(effective_compute(res.trajectory)),
                "n_iterations": sum(1 for s in res.trajectory.segments if s.phase == PRUNE)}


RUNNERS = {"theorysim": TheorySimRunner, "trainer": TrainerRunner}


def _execute(runner, point, seed, index):
    row = {"schema_version": SCHEMA_VERSION, "key": point.key, "index": index,
           "runner": runner.name, "seed": seed, **asdict(point)}
    try:
        row.update(runner(point, seed))
        row["status"] = "ok"
    except Exception as exc:  # recorded per row, never aborts the sweep
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


class ResultsStore:
    """Append-only JSON-lines file; one writer, any number of readers."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def read(self):
        if not self.path.exists():
            return []
        rows = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    break  # partial line from an interrupted write
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                if row.get("schema_version") != SCHEMA_VERSION:
                    raise ValueError(f"{self.path}: unsupported schema version "
                                     f"{row.get('schema_version')!r}")
                rows.append(row)
        return rows

    def completed_keys(self):
        return {r["key"] for r in self.read() if r.get("status") == "ok"}

    def append(self, row):
        line = json.dumps(row, sort_keys=True) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())


@dataclass
class SweepResult:
    rows: list               # latest row per grid point, in enumeration order
    executed: int
    failed: int
    skipped: int
    store: ResultsStore = field(repr=False, default=None)

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.get("status") == "ok"]


def run_sweep(grid, runner, store_path, global_seed=0, workers=1):
    """Run every valid grid point not already completed in the store.

    ``runner`` is a callable ``runner(point, seed) -> dict`` or one of the
    names in :data:`RUNNERS`. Failed points are stored with ``status="error"``
    and retried on the next call.
    """
    if isinstance(runner, str):
        if runner not in RUNNERS:
            raise ValueError(f"unknown runner {runner!r}; choose from {sorted(RUNNERS)}")
        runner = RUNNERS[runner]()
    store = ResultsStore(store_path)
    points = enumerate_points(grid)
    done = store.completed_keys()
    todo = [(i, p) for i, p in enumerate(points) if p.key not in done]
    failed = 0
    if workers <= 1 or len(todo) <= 1:
        for i, p in todo:
            row = _execute(runner, p, derive_seed(global_seed, p), i)
            failed += row["status"] != "ok"
            store.append(row)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_execute, runner, p, derive_seed(global_seed, p), i)
                       for i, p in todo]
            for fut in as_completed(futures):
                row = fut.result()
                failed += row["status"] != "ok"
                store.append(row)
    latest = {}
    for row in store.read():
        if row["key"] not in latest or row.get("status") == "ok" \
                or latest[row["key"]].get("status") != "ok":
            latest[row["key"]] = row
    rows = []
    for i, p in enumerate(points):
        if p.key in latest:
            rows.append({**latest[p.key], "index": i})
    return SweepResult(rows, executed=len(todo), failed=failed,
                       skipped=len(points) - len(todo), store=store)


def best_pair(rows, sparsity=None, duration=None):
    """``(f_dense, f_prune)`` with the lowest loss among matching ok rows."""
    cand = [r for r in rows if r.get("status") == "ok"
            and (sparsity is None or r["sparsity"] == sparsity)
            and (duration is None or r["duration"] == duration)]
    if not cand:
        raise ValueError("no completed rows match")
    best = min(cand, key=lambda r: (r["final_loss"], r["index"]))
    return best["f_dense"], best["f_prune"]
