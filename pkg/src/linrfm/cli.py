"""``linrfm`` command line: gen, solve, sweep, oracle, verify, bench.

Settings come from an optional INI file (``--config``) with an
``[experiment]`` section and one ``[method.NAME]`` section per method, then
from flags, which take precedence.  Exit status: 0 on success, 2 for
configuration or input errors, 3 when a solver fails (or a ``verify`` check
does), 130 on interrupt.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from . import bench
from .exceptions import ConfigError, FormatError, LinRFMError
from .problems import CompletionProblem, load_problem, save_problem
from .trace import fmt_value, write_csv

EXPERIMENT_KEYS = {
    "task": str, "d": int, "d2": int, "r": "ints", "n": int, "n_grid": "ints", "n_max": int,
    "seeds": "ints", "master_seed": int, "sigma": float, "threshold": float, "method": "names",
    "out": str, "plot": str, "workers": int, "timing": bool, "descending": bool,
    "ridge": "floats", "alpha_num": int,
}
SOLVE_COLUMNS = ("method", "d", "r", "n", "seed", "test_mse", "wall_ms", "iters", "ridge", "status")


def _convert(kind, text, name):
    text = str(text).strip()
    try:
        if kind == "ints":
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        if kind == "floats":
            return tuple(float(v) for v in text.replace(" ", "").split(",") if v)
        if kind == "names":
            return tuple(v for v in text.replace(" ", "").split(",") if v)
        if kind is bool:
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        return kind(text)
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r}") from None


def read_config(path):
    """Parse an INI file into ``(experiment settings, {method: {key: text}})``."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err.strerror}") from None
    except configparser.Error as err:
        raise ConfigError("config", str(err).splitlines()[0]) from None
    settings, methods = {}, {}
    for section in parser.sections():
        if section == "experiment":
            for key, value in parser.items(section):
                if key not in EXPERIMENT_KEYS:
                    raise ConfigError(f"experiment.{key}", "unknown setting")
                settings[key] = _convert(EXPERIMENT_KEYS[key], value, f"experiment.{key}")
        elif section.startswith("method."):
            name = section[len("method."):]
            if name not in bench.METHOD_DEFAULTS:
                raise ConfigError(section, "unknown method")
            methods[name] = dict(parser.items(section))
        else:
            raise ConfigError(section, "unknown section; use [experiment] or [method.NAME]")
    return settings, methods


def _settings(args):
    settings, method_params = read_config(args.config) if args.config else ({}, {})
    for key, kind in EXPERIMENT_KEYS.items():
        value = getattr(args, key, None)
        if value is None:
            continue
        if isinstance(value, str) and kind in ("ints", "floats", "names"):
            value = _convert(kind, value, f"--{key.replace('_', '-')}")
        settings[key] = value
    for item in args.set or ():
        target, _, value = item.partition("=")
        name, _, key = target.partition(".")
        if not key or not _:
            raise ConfigError("--set", f"expected METHOD.KEY=VALUE, got {item!r}")
        method_params.setdefault(name, {})[key] = value
    return settings, method_params


def _method_specs(settings, method_params, task):
    names = settings.get("method") or (("svd_free",) if task == "completion" else ("lin_rfm",))
    ridge = settings.get("ridge")
    alpha_num = settings.get("alpha_num")
    used_alpha = False
    specs = []
    for name in names:
        if name not in bench.METHOD_DEFAULTS:
            raise ConfigError("method", f"unknown method {name!r}; choose from {', '.join(bench.METHOD_DEFAULTS)}")
        params = dict(method_params.get(name, {}))
        defaults = bench.METHOD_DEFAULTS[name]
        if ridge is not None:
            if "ridge_grid" in defaults:
                params["ridge_grid"] = ",".join(map(repr, ridge))
            if "ridge" in defaults:
                if len(ridge) != 1 and "ridge_grid" not in defaults:
                    raise ConfigError("ridge", f"{name} takes a single ridge")
                params["ridge"] = repr(ridge[0])
        if alpha_num is not None:
            if name == "svd_free":
                params["k"] = str(alpha_num)
                used_alpha = True
            elif name == "lin_rfm":
                params["alpha"] = repr(alpha_num / 2)
                used_alpha = True
        specs.append(bench.MethodSpec.build(name, params))
    for name in method_params:
        if name not in names:
            raise ConfigError(f"method.{name}", "parameters given for a method that is not selected")
    if alpha_num is not None and not used_alpha:
        raise ConfigError("alpha_num", "only svd_free and lin_rfm take --alpha-num")
    return specs


def _experiment(settings, method_params):
    task = settings.get("task", "completion")
    specs = _method_specs(settings, method_params, task)
    grid = settings.get("n_grid")
    if grid is None and "n" in settings:
        grid = (settings["n"],)
    kwargs = dict(
        methods=specs, task=task, d=settings.get("d", 100), d2=settings.get("d2"),
        ranks=settings.get("r", (5,)), n_grid=grid, n_max=settings.get("n_max"),
        seeds=settings.get("seeds", (0, 1, 2, 3, 4)), master_seed=settings.get("master_seed", 0),
        sigma=settings.get("sigma", 0.0), threshold=settings.get("threshold", 1e-3),
        descending=settings.get("descending", True), workers=settings.get("workers", 1),
        timing=settings.get("timing", True), out=settings.get("out"),
    )
    return bench.ExperimentConfig(**kwargs)


# --------------------------------------------------------------- commands


def cmd_gen(args):
    settings, params = _settings(args)
    cfg = _experiment(settings, params)
    out = Path(settings.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    for r in cfg.ranks:
        for n in cfg.grid(r):
            for seed in cfg.seeds:
                path = out / f"{cfg.task}_d{cfg.d}_r{r}_n{n}_seed{seed}.txt"
                save_problem(bench.make_problem(cfg, r, n, seed), path)
                print(path)
    return 0


def cmd_solve(args):
    settings, params = _settings(args)
    if args.problem:
        problem = load_problem(args.problem)
        task = "completion" if isinstance(problem, CompletionProblem) else "regression"
        settings.setdefault("task", task)
        if settings["task"] != task:
            raise ConfigError("task", f"problem file holds a {task} problem")
        specs = _method_specs(settings, params, task)
        d = problem.shape[0] if task == "completion" else problem.d
        r = getattr(problem, "rank_hint", None) or getattr(problem, "sparsity", None)
        seed = problem.seed
    else:
        if "n" not in settings:
            raise ConfigError("n", "solve needs --n or --problem")
        cfg = _experiment(settings, params)
        specs = cfg.methods
        d, r, seed = cfg.d, cfg.ranks[0], cfg.seeds[0]
        problem = bench.make_problem(cfg, r, settings["n"], seed)
    if len(specs) != 1:
        raise ConfigError("method", "solve runs exactly one method")
    spec = specs[0]
    timing = settings.get("timing", True)
    cell = bench.best_ridge_run(spec, problem, timing=timing, strict=True)
    n = problem.n_obs if isinstance(problem, CompletionProblem) else problem.n
    row = {"method": spec.name, "d": d, "r": r, "n": n, "seed": seed, "test_mse": cell.test_mse, "wall_ms": cell.wall_ms, "iters": cell.iters,
           "ridge": cell.ridge, "status": cell.status}
    _emit([row], SOLVE_COLUMNS, settings.get("out"))
    if args.estimate:
        np.savetxt(args.estimate, np.atleast_2d(cell.estimate), fmt="%.17g")
    return 0


def cmd_sweep(args):
    settings, params = _settings(args)
    cfg = _experiment(settings, params)
    out = settings.get("out")
    progress = None if args.quiet else (
        lambda m, r, n, ok: print(f"{m} r={r} n={n} {'ok' if ok else 'fail'}", file=sys.stderr, flush=True))
    with bench.CsvSink(out) as sink:
        result = bench.sweep(cfg, sink=sink, progress=progress)
    if out:
        with open(Path(out).with_suffix(".thresholds.csv"), "w", encoding="utf-8", newline="") as fh:
            bench.write_thresholds(result, fh)
    bench.write_thresholds(result, sys.stdout)
    plot = settings.get("plot")
    if plot:
        with open(Path(plot).with_suffix(".csv"), "w", encoding="utf-8", newline="") as fh:
            bench.emit_plot_data(result, fh)
        bench.render_plot(result, plot)
    return 0


def cmd_oracle(args):
    from .mx2 import oracle_report, vector_field_grid, write_grid, write_report

    a, b, s, c, d = args.a, args.b, args.s, args.c, args.d_entry
    rows = oracle_report(a=a, b=b, s=s, c=c, d=d)
    grid = vector_field_grid(a, b, c, d, n=args.grid_size)
    out = Path(args.out) if args.out else None
    if out is None:
        write_report(rows, sys.stdout)
        return 0
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mx2_report.csv", "w", encoding="utf-8", newline="") as fh:
        write_report(rows, fh)
    with open(out / "mx2_grid.csv", "w", encoding="utf-8", newline="") as fh:
        write_grid(grid, fh)
    print(out / "mx2_report.csv")
    print(out / "mx2_grid.csv")
    return 0


def cmd_verify(args):
    rows = bench.verify_suite()
    _emit(rows, bench.VERIFY_COLUMNS, args.out)
    return 0 if all(r["passed"] for r in rows) else 3


def cmd_bench(args):
    rows, slope = bench.row_cost_scaling(d1=args.rows, counts=tuple(args.counts))
    table = bench.iteration_cost_table(dims=tuple(args.dims))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "row_cost.csv", "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, ("n_per_row", "seconds"), fh)
        with open(out / "iteration_cost.csv", "w", encoding="utf-8", newline="") as fh:
            write_csv(table, ("d", "n", "svd_free_ms", "svd_path_ms"), fh)
    else:
        write_csv(rows, ("n_per_row", "seconds"), sys.stdout)
        write_csv(table, ("d", "n", "svd_free_ms", "svd_path_ms"), sys.stdout)
    print(f"row cost log-log slope: {fmt_value(slope)}", file=sys.stderr)
    return 0


def _emit(rows, columns, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, columns, fh)
    else:
        write_csv(rows, columns, sys.stdout)


# ------------------------------------------------------------------ parser


def _experiment_flags(p):
    p.add_argument("--config", help="INI file with [experiment] and [method.NAME] sections")
    p.add_argument("--method", help="comma-separated method names")
    p.add_argument("--task", choices=bench.TASKS)
    p.add_argument("--d", type=int, help="rows (completion) or features (regression)")
    p.add_argument("--d2", type=int, help="columns, if not square")
    p.add_argument("--r", help="rank or sparsity; comma list for sweeps")
    p.add_argument("--n", type=int, help="number of observations")
    p.add_argument("--n-grid", dest="n_grid", help="comma-separated, strictly increasing")
    p.add_argument("--n-max", dest="n_max", type=int, help="cap for the default grid")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--sigma", type=float, help="label noise standard deviation")
    p.add_argument("--threshold", type=float, help="success threshold on test MSE")
    p.add_argument("--ridge", help="ridge, or comma-separated ridge grid")
    p.add_argument("--alpha-num", dest="alpha_num", type=int, help="k in alpha = k/2")
    p.add_argument("--out", help="output path")
    p.add_argument("--plot", help="figure path (also writes the long-form CSV next to it)")
    p.add_argument("--workers", type=int)
    p.add_argument("--full-grid", dest="descending", action="store_const", const=False,
                   help="evaluate every grid point and seed instead of stopping at the first failure")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="write 0 for wall times (byte-reproducible output)")
    p.add_argument("--set", action="append", metavar="METHOD.KEY=VALUE", help="method parameter")


def build_parser():
    parser = argparse.ArgumentParser(prog="linrfm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write problem files")
    _experiment_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run one method on one problem")
    _experiment_flags(p)
    p.add_argument("--problem", help="problem file written by gen")
    p.add_argument("--estimate", help="also save the estimate as text")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="grid x seeds, threshold_n per method")
    _experiment_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="closed-form two-column reports and vector field grid")
    for name in ("a", "b", "s", "c"):
        p.add_argument(f"--{name}", type=float, default=1.0)
    p.add_argument("--d", dest="d_entry", type=float, default=1.0)
    p.add_argument("--grid-size", type=int, default=41)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="equivalence, balancedness and fixed-point checks")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="wall-time scaling tables")
    p.add_argument("--rows", type=int, default=2000, help="rows of the per-row cost problem")
    p.add_argument("--counts", type=int, nargs="+", default=[8, 16, 32, 64])
    p.add_argument("--dims", type=int, nargs="+", default=[50, 100, 200])
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as err:
        print(f"linrfm: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"linrfm: error: {err}", file=sys.stderr)
        return 2
    except LinRFMError as err:
        print(f"linrfm: solver failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        print("linrfm: interrupted; partial results were flushed", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
