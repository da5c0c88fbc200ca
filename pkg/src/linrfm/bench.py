"""Experiment harness: single runs, phase-transition sweeps and timing tables.

A sweep evaluates every method on a grid of observation counts ``n`` and a
list of seeds.  The problem for ``(r, n, seed)`` is drawn from a generator
seeded by ``cell_seed(master_seed, seed)``, so every method sees the same
instances and the ground truth for a seed is shared across ``n``.  A grid
point succeeds when every seed reaches test MSE below the threshold, and
``threshold_n`` is the smallest successful grid point.

Wall times cover the solver call only; problem generation and scoring are
outside the timer.  ``timing=False`` writes 0 so that CSV output is
byte-for-byte reproducible.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .baselines import (
    GD,
    DiagNearZero,
    Gaussian,
    RMSProp,
    TrainConfig,
    init_net,
    l1_min,
    nuclear_norm_min,
    train_diag_net,
    train_linear_net,
)
from .deep import DeepRfmConfig, balanced_alphas, deep_lin_rfm_run
from .exceptions import ConfigError, Divergence, LinRFMError, NonConvergence
from .irls import IrlsConfig, irls_run
from .problems import (
    CompletionProblem,
    add_label_noise,
    degrees_of_freedom,
    gen_low_rank_completion,
    gen_sparse_regression,
    test_mse,
)
from .rfm import RfmConfig, diag_rfm_run, lin_rfm_run
from .spectral import Power
from .svdfree import NOISY_RIDGE_GRID, RIDGE_GRID, svdfree_run
from .trace import fmt_value, write_csv

CELL_COLUMNS = ("method", "d", "r", "n", "seed", "test_mse", "wall_ms", "iters", "ridge", "status", "selected", "dof_marker")
PLOT_COLUMNS = ("method", "d", "r", "n", "seed", "test_mse", "wall_ms")
THRESHOLD_COLUMNS = ("method", "d", "r", "threshold_n", "degrees_of_freedom")
GRID_FACTOR = 1.15
TASKS = ("completion", "regression")

# ------------------------------------------------------------------ methods

#: Default parameters per method; the type of each default is the parse type.
#: ``lin_rfm`` searches ``ridge_grid`` on completion and uses ``ridge`` on regression.
#: An empty ``ridge_grid`` means :data:`RIDGE_GRID`, or :data:`NOISY_RIDGE_GRID`
#: when the observations carry label noise.
METHOD_DEFAULTS = {
    "lin_rfm": {"alpha": 0.5, "eps": 0.0, "ridge": 1e-10, "ridge_grid": (), "max_iters": 1000, "tol": 1e-10},
    "svd_free": {"k": 1, "ridge_grid": (), "max_iters": 10_000, "tol": 1e-10},
    "deep_rfm": {"alphas": tuple(balanced_alphas(2)), "eps": 1e-6, "ridge": 1e-10, "max_iters": 1000, "tol": 1e-10},
    "irls": {"p": 1.0, "eps0": 1e-6, "ridge": 1e-10, "max_iters": 1000, "tol": 1e-10},
    "linear_net": {"depth": 3, "optimizer": "rmsprop", "lr": 1e-3, "steps": 20_000, "eval_every": 100, "init_std": 0.0},
    "diag_net": {"depth": 2, "lr": 0.1, "steps": 100_000, "eval_every": 100, "init_std": 1e-5},
    "l1": {"tol": 1e-8, "max_iters": 100_000},
    "nuclear": {"tol": 1e-7, "max_iters": 50_000},
}
METHOD_TASKS = {
    "lin_rfm": ("completion", "regression"),
    "svd_free": ("completion",),
    "deep_rfm": ("completion",),
    "irls": ("completion",),
    "linear_net": ("completion",),
    "diag_net": ("regression",),
    "l1": ("regression",),
    "nuclear": ("completion",),
}


def _parse_value(default, text, field_name):
    try:
        if isinstance(default, tuple):
            return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
        if isinstance(default, bool):
            low = str(text).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            value = float(text)
            if value != int(value):
                raise ValueError(text)
            return int(value)
        if isinstance(default, float):
            return float(text)
        return str(text).strip()
    except (TypeError, ValueError):
        raise ConfigError(field_name, f"cannot parse {text!r} as {type(default).__name__}") from None


@dataclass(frozen=True)
class MethodSpec:
    """A method name plus its parameters (defaults filled in)."""

    name: str
    params: Tuple[Tuple[str, object], ...] = ()

    @classmethod
    def build(cls, name, overrides=None):
        """Validate ``overrides`` (strings or values) against the method's defaults."""
        if name not in METHOD_DEFAULTS:
            raise ConfigError("method", f"unknown method {name!r}; choose from {', '.join(METHOD_DEFAULTS)}")
        params = dict(METHOD_DEFAULTS[name])
        for key, value in (overrides or {}).items():
            if key not in params:
                raise ConfigError(f"{name}.{key}", "unknown parameter")
            default = params[key]
            if isinstance(value, str) or isinstance(default, tuple):
                value = _parse_value(default, value if isinstance(value, str) else ",".join(map(str, value)), f"{name}.{key}")
            params[key] = value
        _check_params(name, params)
        return cls(name, tuple(params.items()))

    @property
    def p(self):
        return dict(self.params)

    def ridges(self, task="completion", noisy=False):
        """Ridges searched per grid point; ``(None,)`` when the method has no grid."""
        if self.name == "svd_free" or (self.name == "lin_rfm" and task == "completion"):
            return tuple(self.p["ridge_grid"]) or (NOISY_RIDGE_GRID if noisy else RIDGE_GRID)
        return (None,)


def _check_params(name, p):
    def need(key, ok, what):
        if not ok:
            raise ConfigError(f"{name}.{key}", f"{what}, got {p[key]!r}")

    for key in ("ridge", "eps", "eps0", "init_std"):
        if key in p:
            need(key, p[key] >= 0, "must be >= 0")
    for key in ("tol", "lr", "alpha"):
        if key in p:
            need(key, p[key] > 0, "must be > 0")
    for key in ("max_iters", "steps", "eval_every", "depth", "k"):
        if key in p:
            need(key, p[key] >= 1, "must be >= 1")
    if "ridge_grid" in p:
        need("ridge_grid", min(p["ridge_grid"], default=0.0) >= 0, "needs non-negative ridges")
    if name == "linear_net":
        need("optimizer", p["optimizer"] in ("rmsprop", "gd"), "must be rmsprop or gd")
    if name == "irls":
        need("p", p["p"] < 2, "must be < 2")
        need("eps0", p["eps0"] > 0, "must be > 0")
    if name == "deep_rfm":
        need("alphas", len(p["alphas"]) > 0 and min(p["alphas"]) > 0, "needs positive powers")
        need("eps", p["eps"] > 0, "must be > 0")


@dataclass(frozen=True)
class CellResult:
    estimate: np.ndarray
    test_mse: float
    wall_ms: float
    iters: int
    status: str = "ok"
    ridge: Optional[float] = None


def _solve(spec, problem, target, ridge):
    """Dispatch to the solver; returns ``(estimate, iterations)``."""
    p = spec.p
    name = spec.name
    if name == "lin_rfm":
        cfg = RfmConfig(phi=Power(p["alpha"], p["eps"]), max_iters=p["max_iters"], tol=p["tol"],
                        ridge=p["ridge"] if ridge is None else ridge, record_objective=False)
        if isinstance(problem, CompletionProblem):
            state, _ = lin_rfm_run(problem, cfg)
            return state.Z, state.t
        beta, trace = diag_rfm_run(problem, cfg)
        return beta, len(trace) - 1
    if name == "svd_free":
        Z, trace = svdfree_run(problem, p["k"], ridge=ridge, max_iters=p["max_iters"], tol=p["tol"],
                               track_test_mse=target is not None, timing=False, target_mse=target)
        return Z, trace.info["n_iter"]
    if name == "deep_rfm":
        cfg = DeepRfmConfig(alphas=p["alphas"], epsilon=p["eps"], max_iters=p["max_iters"], tol=p["tol"], ridge=p["ridge"])
        state, _ = deep_lin_rfm_run(problem, cfg)
        return state.Z, state.t
    if name == "irls":
        cfg = IrlsConfig(p=p["p"], eps0=p["eps0"], max_iters=p["max_iters"], tol=p["tol"], ridge=p["ridge"])
        state, trace = irls_run(problem, cfg)
        return state.X, state.t
    if name == "linear_net":
        opt = RMSProp(p["lr"]) if p["optimizer"] == "rmsprop" else GD(p["lr"])
        cfg = TrainConfig(optimizer=opt, steps=p["steps"], init=Gaussian(p["init_std"] or None),
                          early_stop_mse=target, eval_every=p["eval_every"], seed=problem.seed)
        net, trace = train_linear_net(problem, init_net(problem, p["depth"], cfg), cfg)
        return net.end_to_end(), trace.info["steps"]
    if name == "diag_net":
        cfg = TrainConfig(optimizer=GD(p["lr"]), steps=p["steps"], init=DiagNearZero(p["init_std"]),
                          early_stop_mse=target, eval_every=p["eval_every"], seed=problem.seed)
        w, trace = train_diag_net(problem, p["depth"], cfg)
        return w, trace.info["steps"]
    if name == "l1":
        w, info = l1_min(problem, tol=p["tol"], max_iters=p["max_iters"], return_info=True)
        return w, info["iters"]
    X, info = nuclear_norm_min(problem, tol=p["tol"], max_iters=p["max_iters"], return_info=True)
    return X, info["iters"]


def run_cell(spec, problem, target=None, ridge=None, timing=True, strict=False):
    """Run one method on one problem and score it against the clean ground truth.

    Parameters
    ----------
    target : float, optional
        Early-stopping test MSE for the methods that support it (networks and
        the SVD-free iteration).
    ridge : float, optional
        Ridge for methods that search a grid; defaults to the first grid entry.
    strict : bool
        Re-raise solver errors instead of recording them in ``status``.

    Returns
    -------
    CellResult
        ``status`` is ``ok``, ``nonconvergence`` (the last iterate is scored),
        ``divergence`` or the name of another solver error (MSE is ``inf``).
    """
    task = "completion" if isinstance(problem, CompletionProblem) else "regression"
    if task not in METHOD_TASKS[spec.name]:
        raise ConfigError("method", f"{spec.name} does not solve {task} problems")
    if ridge is None:
        ridge = spec.ridges(task, problem.noisy)[0]
    start = time.perf_counter()
    status = "ok"
    try:
        estimate, iters = _solve(spec, problem, target, ridge)
    except NonConvergence as err:
        if strict:
            raise
        estimate, iters, status = getattr(err, "estimate", None), -1, "nonconvergence"
    except LinRFMError as err:
        if strict:
            raise
        estimate, iters = None, -1
        status = "divergence" if isinstance(err, Divergence) else type(err).__name__
    wall = (time.perf_counter() - start) * 1e3 if timing else 0.0
    mse = test_mse(estimate, problem) if estimate is not None else math.inf
    if not math.isfinite(mse):
        mse = math.inf
    return CellResult(estimate, mse, wall, int(iters), status, ridge)


def best_ridge_run(spec, problem, target=None, timing=True, strict=False):
    """Run over the method's ridge grid (largest first) and keep the lowest test MSE.

    With ``target`` the search stops at the first ridge that reaches it.
    Methods without a grid run once.
    """
    task = "completion" if isinstance(problem, CompletionProblem) else "regression"
    best = None
    for ridge in spec.ridges(task, problem.noisy):
        cell = run_cell(spec, problem, target=target, ridge=ridge, timing=timing, strict=strict)
        if best is None or cell.test_mse < best.test_mse:
            best = cell
        if target is not None and cell.test_mse < target:
            break
    return best


# ------------------------------------------------------------------- config


def default_grid(d, r, task="completion", d2=None, factor=GRID_FACTOR, n_max=None):
    """Grid from the degrees of freedom upward in ``factor`` steps.

    Completion starts at ``d1 r + d2 r - r^2`` and is capped at ``d1 d2``;
    regression starts at the sparsity ``r`` and is capped at ``d``.  The cap
    (or ``n_max`` when smaller) is always the last point.
    """
    if task == "completion":
        start, cap = degrees_of_freedom(d, r, d2), d * (d if d2 is None else d2)
    else:
        start, cap = r, d
    if n_max is not None:
        cap = min(cap, int(n_max))
    if start > cap:
        raise ConfigError("n_max", f"grid start {start} exceeds the cap {cap}")
    grid = [start]
    k = 1
    while True:
        nxt = max(grid[-1] + 1, int(round(start * factor**k)))
        k += 1
        if nxt >= cap:
            break
        grid.append(nxt)
    # a generated point closer than half a step below the cap is replaced by it
    if len(grid) > 1 and grid[-1] * math.sqrt(factor) > cap:
        grid[-1] = cap
    elif grid[-1] != cap:
        grid.append(cap)
    return tuple(grid)


def cell_seed(master_seed, seed):
    """Problem seed for one seed slot, independent across master seeds."""
    return int(np.random.SeedSequence([int(master_seed), int(seed)]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """A sweep: methods x ranks x grid x seeds.

    ``n_grid=None`` uses :func:`default_grid` per rank.  ``descending`` walks
    the grid from the top and stops a method at its first failing grid point
    (and a grid point at its first failing seed); this assumes success is
    monotone in ``n`` and is much cheaper than the full grid.
    """

    methods: Tuple[MethodSpec, ...]
    task: str = "completion"
    d: int = 100
    d2: Optional[int] = None
    ranks: Tuple[int, ...] = (5,)
    n_grid: Optional[Tuple[int, ...]] = None
    n_max: Optional[int] = None
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    master_seed: int = 0
    sigma: float = 0.0
    threshold: float = 1e-3
    descending: bool = True
    workers: int = 1
    timing: bool = True
    out: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.methods:
            raise ConfigError("method", "at least one method is required")
        if self.task not in TASKS:
            raise ConfigError("task", f"must be one of {TASKS}, got {self.task!r}")
        for spec in self.methods:
            if self.task not in METHOD_TASKS[spec.name]:
                raise ConfigError("method", f"{spec.name} does not solve {self.task} problems")
        if self.d < 1 or (self.d2 is not None and self.d2 < 1):
            raise ConfigError("d", "dimensions must be positive")
        if not self.ranks or min(self.ranks) < 1:
            raise ConfigError("r", "need at least one positive rank")
        limit = self.d if self.task == "regression" else min(self.d, self.d2 or self.d)
        if max(self.ranks) > limit:
            raise ConfigError("r", f"rank {max(self.ranks)} exceeds {limit}")
        if not self.seeds:
            raise ConfigError("seeds", "must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "must be distinct")
        if self.n_grid is not None:
            grid = tuple(int(n) for n in self.n_grid)
            object.__setattr__(self, "n_grid", grid)
            if not grid:
                raise ConfigError("n_grid", "must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError("n_grid", "must be strictly increasing")
            cap = self.d * (self.d2 or self.d) if self.task == "completion" else None
            if grid[0] < 1 or (cap is not None and grid[-1] > cap):
                raise ConfigError("n_grid", f"points must lie in [1, {cap}]")
        if not self.threshold > 0:
            raise ConfigError("threshold", "must be > 0")
        if self.sigma < 0:
            raise ConfigError("sigma", "must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")

    def grid(self, r):
        if self.n_grid is not None:
            return self.n_grid
        return default_grid(self.d, r, self.task, self.d2, n_max=self.n_max)

    def dof(self, r):
        return r if self.task == "regression" else degrees_of_freedom(self.d, r, self.d2)


def make_problem(config, r, n, seed):
    """The instance for one ``(r, n, seed)`` cell, with label noise if configured."""
    ps = cell_seed(config.master_seed, seed)
    if config.task == "completion":
        problem = gen_low_rank_completion(config.d, r, n, ps, d2=config.d2)
    else:
        problem = gen_sparse_regression(n, config.d, r, ps)
    return add_label_noise(problem, config.sigma, ps)


# -------------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    """Cell rows plus the per-level verdicts of a sweep.

    ``levels`` maps ``(method, r, n)`` to ``{"success", "ridge"}`` for every
    grid point that was evaluated.
    """

    config: ExperimentConfig
    cells: list = field(default_factory=list)
    levels: dict = field(default_factory=dict)

    def success(self, method, r, n):
        return self.levels[(method, r, n)]["success"]

    def threshold_n(self, method, r):
        """Smallest evaluated grid point with success, or None."""
        ok = [n for (m, rr, n), v in self.levels.items() if m == method and rr == r and v["success"]]
        return min(ok) if ok else None

    def threshold_rows(self):
        rows = []
        for spec in self.config.methods:
            for r in self.config.ranks:
                t = self.threshold_n(spec.name, r)
                rows.append({"method": spec.name, "d": self.config.d, "r": r,
                             "threshold_n": "none" if t is None else t, "degrees_of_freedom": self.config.dof(r)})
        return rows


def threshold_from_cells(cells, threshold, n_seeds):
    """Recompute ``threshold_n`` per ``(method, r)`` from selected cell rows.

    A grid point succeeds when it holds ``n_seeds`` selected rows, all with
    test MSE below ``threshold``.
    """
    groups = {}
    for row in cells:
        if int(row["selected"]):
            groups.setdefault((row["method"], int(row["r"]), int(row["n"])), []).append(float(row["test_mse"]))
    out = {}
    for (m, r, n), mses in groups.items():
        out.setdefault((m, r), None)
        if len(mses) == n_seeds and max(mses) < threshold:
            out[(m, r)] = n if out[(m, r)] is None else min(out[(m, r)], n)
    return out


def _cell_task(args):
    config, spec, r, n, seed, ridge = args
    problem = make_problem(config, r, n, seed)
    cell = run_cell(spec, problem, target=config.threshold if config.descending else None,
                    ridge=ridge, timing=config.timing)
    return seed, cell


class CsvSink:
    """Single writer for cell rows; flushes after every row so partial sweeps survive."""

    def __init__(self, path, columns=CELL_COLUMNS):
        self.columns = columns
        self._fh = open(path, "w", encoding="utf-8", newline="") if path is not None else None
        if self._fh is not None:
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(columns)
            self._fh.flush()

    def write(self, row):
        if self._fh is not None:
            self._writer.writerow([fmt_value(row.get(c)) for c in self.columns])
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _run_level(config, spec, r, n, pool):
    """All ridges and seeds for one grid point; returns the attempts."""
    attempts = []
    for ridge in spec.ridges(config.task, config.sigma > 0):
        cells = []
        if pool is not None:
            jobs = [(config, spec, r, n, seed, ridge) for seed in config.seeds]
            cells = [cell for _, cell in pool.map(_cell_task, jobs)]
        else:
            for seed in config.seeds:
                _, cell = _cell_task((config, spec, r, n, seed, ridge))
                cells.append(cell)
                if config.descending and not cell.test_mse < config.threshold:
                    break
        ok = len(cells) == len(config.seeds) and all(c.test_mse < config.threshold for c in cells)
        attempts.append((ridge, cells, ok))
        if config.descending and ok:
            break
    return attempts


def _select(attempts):
    """Prefer a ridge on which every seed succeeds, then the lowest mean test MSE."""
    def key(i):
        _, cells, ok = attempts[i]
        return (not ok, float(np.mean([c.test_mse for c in cells])), i)

    return min(range(len(attempts)), key=key)


def sweep(config, sink=None, progress=None):
    """Evaluate every method over the grid and seeds of ``config``.

    Parameters
    ----------
    sink : CsvSink, optional
        Receives cell rows as each grid point finishes.
    progress : callable, optional
        Called as ``progress(method, r, n, success)`` after each grid point.

    Returns
    -------
    SweepResult
    """
    result = SweepResult(config)
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for spec in config.methods:
            for r in config.ranks:
                grid = config.grid(r)
                dof = config.dof(r)
                order = grid[::-1] if config.descending else grid
                for n in order:
                    attempts = _run_level(config, spec, r, n, pool)
                    chosen = _select(attempts)
                    ridge, _, ok = attempts[chosen]
                    result.levels[(spec.name, r, n)] = {"success": ok, "ridge": ridge}
                    for i, (_, cells, _) in enumerate(attempts):
                        for seed, cell in zip(config.seeds, cells):
                            row = {
                                "method": spec.name, "d": config.d, "r": r, "n": n, "seed": seed,
                                "test_mse": cell.test_mse, "wall_ms": cell.wall_ms, "iters": cell.iters,
                                "ridge": cell.ridge, "status": cell.status, "selected": int(i == chosen),
                                "dof_marker": int(n == dof),
                            }
                            result.cells.append(row)
                            if sink is not None:
                                sink.write(row)
                    if progress is not None:
                        progress(spec.name, r, n, ok)
                    if config.descending and not ok:
                        break
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return result


def compare_at_n(spec, baseline, d, r, n, sigma=0.0, seeds=(0, 1, 2, 3, 4), master_seeds=(0,), timing=False):
    """Mean test MSE of two methods on the same instances, one row per master seed.

    Every seed and every ridge is run (no early stopping); the method's ridge
    is the one with the lowest mean test MSE over the seeds.
    """
    rows = []
    for master in master_seeds:
        cfg = ExperimentConfig(methods=(spec, baseline), d=d, ranks=(r,), n_grid=(n,), seeds=seeds,
                               master_seed=master, sigma=sigma, descending=False, timing=timing)
        res = sweep(cfg)

        def mean_mse(name):
            return float(np.mean([c["test_mse"] for c in res.cells if c["selected"] and c["method"] == name]))

        rows.append({"master_seed": master, "n": n, "method_mse": mean_mse(spec.name),
                     "baseline_mse": mean_mse(baseline.name), "ridge": res.levels[(spec.name, r, n)]["ridge"]})
    return rows


# ------------------------------------------------------------------ output


def emit_plot_data(result, fh):
    """Long-form CSV of the selected cells, one row per ``(method, r, n, seed)``."""
    rows = [row for row in result.cells if row["selected"]] if result is not None else []
    write_csv(rows, PLOT_COLUMNS, fh)


def write_thresholds(result, fh):
    write_csv(result.threshold_rows(), THRESHOLD_COLUMNS, fh)


def render_plot(result, path):
    """Test MSE against ``n`` per rank, and ``threshold_n`` against rank.

    The dashed black line marks ``2 d r - r^2`` (the degrees of freedom).
    Requires matplotlib.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("plot", "matplotlib is not installed (pip install matplotlib)") from None
    cfg = result.config
    ranks = cfg.ranks
    fig, axes = plt.subplots(1, len(ranks) + 1, figsize=(4.2 * (len(ranks) + 1), 3.6))
    for ax, r in zip(axes, ranks):
        for spec in cfg.methods:
            pts = {}
            for row in result.cells:
                if row["selected"] and row["method"] == spec.name and row["r"] == r:
                    pts.setdefault(row["n"], []).append(row["test_mse"])
            ns = sorted(pts)
            ax.plot(ns, [np.mean(pts[n]) for n in ns], marker="o", label=spec.name)
        ax.axvline(cfg.dof(r), color="black", linestyle="--", linewidth=1)
        ax.axhline(cfg.threshold, color="grey", linestyle=":", linewidth=1)
        ax.set_yscale("log")
        ax.set_xlabel("observations")
        ax.set_ylabel("test MSE")
        ax.set_title(f"d={cfg.d}, r={r}")
    ax = axes[-1]
    for spec in cfg.methods:
        ts = [result.threshold_n(spec.name, r) for r in ranks]
        ax.plot([r for r, t in zip(ranks, ts) if t is not None], [t for t in ts if t is not None], marker="o", label=spec.name)
    ax.plot(ranks, [cfg.dof(r) for r in ranks], color="black", linestyle="--", label="degrees of freedom")
    ax.set_xlabel("rank")
    ax.set_ylabel("observations needed")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ------------------------------------------------------------------- timing


def row_cost_scaling(d1=2000, d2=2048, counts=(8, 16, 32, 64), repeats=5, seed=0):
    """Time one dual solve of the SVD-free iteration with ``n_i`` observations per row.

    Returns rows ``{n_per_row, seconds}`` (best of ``repeats``) and the
    log-log slope of seconds against ``n_per_row``.
    """
    from .svdfree import RowLayout, SvdFreeState, solve_gamma

    rng = np.random.default_rng(seed)
    U = rng.standard_normal((d2, 4))
    Msq = np.eye(d2) + U @ U.T / d2
    rows = []
    for n_i in counts:
        cols = np.concatenate([np.sort(rng.choice(d2, n_i, replace=False)) for _ in range(d1)])
        p = CompletionProblem(d1, d2, np.repeat(np.arange(d1), n_i), cols, rng.standard_normal(d1 * n_i))
        layout = RowLayout(p)
        state = SvdFreeState(Msq=Msq, gamma=None, t=0, alpha_numerator=1)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            solve_gamma(state, p, 1e-3, layout=layout)
            best = min(best, time.perf_counter() - t0)
        rows.append({"n_per_row": n_i, "seconds": best})
    slope = float(np.polyfit(np.log(counts), np.log([r["seconds"] for r in rows]), 1)[0])
    return rows, slope


def iteration_cost_table(dims=(50, 100, 200), r=5, oversample=3.0, iters=5, seed=0):
    """Milliseconds per iteration of the SVD-free and eigendecomposition paths (``alpha = 1/2``)."""
    from .spectral import HalfIntegerPower

    rows = []
    for d in dims:
        n = min(d * d, int(round(oversample * degrees_of_freedom(d, r))))
        p = gen_low_rank_completion(d, r, n, seed)
        t0 = time.perf_counter()
        svdfree_run(p, 1, ridge=1e-3, max_iters=iters, tol=1e-300, track_test_mse=False, timing=False)
        fast = (time.perf_counter() - t0) * 1e3 / (iters + 1)
        cfg = RfmConfig(phi=HalfIntegerPower(1), ridge=1e-3, max_iters=iters, fixed_iterations=True, record_objective=False)
        t0 = time.perf_counter()
        lin_rfm_run(p, cfg)
        slow = (time.perf_counter() - t0) * 1e3 / (iters + 1)
        rows.append({"d": d, "n": n, "svd_free_ms": fast, "svd_path_ms": slow})
    return rows


# ------------------------------------------------------------------- verify


def verify_suite():
    """Fast consistency checks; rows ``{check, value, tolerance, passed}``."""
    from .baselines import Balanced, balancedness_defect, nfa_defect
    from .irls import rfm_irls_equivalence_check
    from .mx2 import oracle_report
    from .problems import gen_sensing
    from .rfm import fixed_point_residual
    from .svdfree import svd_path_deviation

    rows = []

    def add(name, value, tol):
        rows.append({"check": name, "value": float(value), "tolerance": tol, "passed": bool(value < tol)})

    p = gen_low_rank_completion(20, 3, 200, seed=0)
    add("irls_equivalence", max(rfm_irls_equivalence_check(p, a, 1e-6, iters=10) for a in (0.25, 0.5, 1.0)), 1e-7)
    q = gen_low_rank_completion(30, 2, 200, seed=0)
    add("svd_free_equivalence", max(svd_path_deviation(q, k) for k in (1, 2)), 1e-6)
    phi = Power(3 / 8, 1e-6)
    f = gen_low_rank_completion(20, 2, 340, seed=1)
    state, _ = lin_rfm_run(f, RfmConfig(phi=phi, tol=1e-14, ridge=0.0, max_iters=3000, record_objective=False))
    stat = fixed_point_residual(state.Z, f, phi).stationarity_residual if state.converged else math.inf
    add("fixed_point_stationarity", stat, 1e-5)
    s = gen_sensing(6, 6, 2, 10, seed=0, normalize=True)
    cfg = TrainConfig(optimizer=GD(1e-3), steps=2000, init=Balanced(1.0), eval_every=2000, seed=10)
    net, _ = train_linear_net(s, init_net(s, 3, cfg), cfg)
    add("balancedness", balancedness_defect(net), 1e-3)
    add("nfa", max(nfa_defect(net, layer) for layer in (1, 2, 3)), 1e-3)
    add("mx2_traces", max(row["algorithm_deviation"] for row in oracle_report()), 1e-8)
    return rows


VERIFY_COLUMNS = ("check", "value", "tolerance", "passed")

__all__ = [
    "CELL_COLUMNS",
    "PLOT_COLUMNS",
    "THRESHOLD_COLUMNS",
    "METHOD_DEFAULTS",
    "METHOD_TASKS",
    "MethodSpec",
    "CellResult",
    "ExperimentConfig",
    "SweepResult",
    "CsvSink",
    "run_cell",
    "best_ridge_run",
    "default_grid",
    "cell_seed",
    "make_problem",
    "sweep",
    "threshold_from_cells",
    "compare_at_n",
    "emit_plot_data",
    "write_thresholds",
    "render_plot",
    "row_cost_scaling",
    "iteration_cost_table",
    "verify_suite",
]
