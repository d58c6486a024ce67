"""Command-line front end: fit, predict, sequential, report.

Every command reads a single JSON config; --seed and --out override the
config's values, so a run is reproducible from the file alone. Exit
codes: 0 success, 1 validation or config error, 2 numerical failure,
3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .cokriging import (
    LevelConfig,
    MultiFidelityData,
    fit_multifidelity,
)
from .exceptions import (
    DuplicateDesignPointError,
    FitFailedError,
    IllConditionedError,
    InternalConsistencyError,
    MfkrigError,
    OracleTooLargeError,
    ParseError,
    SingularTrendError,
)
from .kernels import BasisSpec, KernelSpec
from .sequential import (
    CostModel,
    Domain,
    GridQuadrature,
    GridSearch,
    MonteCarloQuadrature,
    MultistartSearch,
    RandomSearch,
    product_grid,
    read_trace,
    run_loop,
    write_trace,
)
from .testbed import (
    get_problem,
    load_data,
    load_model,
    load_points,
    nested_lhs,
    save_model,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

_NUMERICAL_ERRORS = (FitFailedError, IllConditionedError,
                     InternalConsistencyError, OracleTooLargeError)
_VALIDATION_ERRORS = (ValueError, KeyError, TypeError,
                      DuplicateDesignPointError, SingularTrendError)


class _ConfigError(ValueError):
    """Config file is structurally wrong (missing or mistyped key)."""


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(config, dict):
        raise _ConfigError(f"{path}: config must be a JSON object")
    return config


def _require(config, key):
    if key not in config:
        raise _ConfigError(f"config is missing required key {key!r}")
    return config[key]


def _level_configs(config, dimension) -> list[LevelConfig]:
    """Level structure from config; defaults are constant bases and a
    squared-exponential kernel at every level."""
    raw = config.get("levels")
    count = config.get("level_count")
    if raw is None:
        if count is None:
            raise _ConfigError("config needs 'levels' or 'level_count'")
        raw = [{} for _ in range(int(count))]
    configs = []
    for t, entry in enumerate(raw, start=1):
        if not isinstance(entry, dict):
            raise _ConfigError(f"levels[{t - 1}] must be an object")
        kernel = KernelSpec(entry.get("kernel", "squared-exponential"))
        trend = BasisSpec(entry.get("trend", "constant"), dimension)
        scaling = entry.get("scaling", "constant" if t > 1 else None)
        if t == 1 and scaling is not None:
            raise _ConfigError("level 1 takes no scaling basis")
        spec = None if scaling is None else BasisSpec(scaling, dimension)
        configs.append(LevelConfig(trend=trend, kernel=kernel, scaling=spec))
    return configs


def _build_data(config, problem) -> MultiFidelityData:
    """Initial data: from a directory of CSVs, or by sampling a nested
    design and running the built-in problem's level functions."""
    if "data_dir" in config:
        return load_data(config["data_dir"])
    if problem is None:
        raise _ConfigError("config needs 'problem' or 'data_dir'")
    sizes = _require(config, "sizes")
    seed = int(config.get("seed", 0))
    designs = nested_lhs(sizes, problem.bounds, seed=seed)
    if len(designs) > problem.level_count:
        raise _ConfigError("more sizes than problem levels")
    observations = [problem.evaluate(t + 1, d) for t, d in enumerate(designs)]
    return MultiFidelityData(designs, observations)


def _search_from(config):
    raw = config.get("search")
    if raw is None:
        return None
    kind = raw.get("kind")
    if kind == "grid":
        return GridSearch(int(raw["n"]))
    if kind == "random":
        return RandomSearch(int(raw["n"]), seed=int(raw.get("seed", 0)),
                            polish=bool(raw.get("polish", False)))
    if kind == "multistart":
        return MultistartSearch(int(raw["k"]), seed=int(raw.get("seed", 0)))
    raise _ConfigError(f"unknown search kind {kind!r}")


def _quadrature_from(config):
    raw = config.get("quadrature")
    if raw is None:
        return None
    kind = raw.get("kind")
    if kind == "grid":
        return GridQuadrature(int(raw["n"]))
    if kind == "monte-carlo":
        return MonteCarloQuadrature(int(raw["n"]), seed=int(raw.get("seed", 0)))
    raise _ConfigError(f"unknown quadrature kind {kind!r}")


def _fit_from_config(config):
    problem = get_problem(config["problem"]) if "problem" in config else None
    data = _build_data(config, problem)
    configs = _level_configs(config, data.dimension)
    if len(configs) != data.levels:
        raise _ConfigError(
            f"config describes {len(configs)} levels but the data has "
            f"{data.levels}")
    model = fit_multifidelity(data, configs,
                              restarts=int(config.get("restarts", 5)),
                              seed=int(config.get("seed", 0)))
    return problem, model


def _write_fit_report(model, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, level in enumerate(model.levels, start=1):
            fh.write(f"level {t}\n")
            fh.write(f"  kernel: {level.kernel.family}\n")
            fh.write("  lengthscales: "
                     + " ".join(_fmt(v) for v in level.kernel.lengthscales)
                     + "\n")
            fh.write(f"  sigma2: {_fmt(level.sigma2)}\n")
            fh.write("  beta: " + " ".join(_fmt(v) for v in level.beta) + "\n")
            if level.rho_beta is not None:
                fh.write("  scaling coefficients: "
                         + " ".join(_fmt(v) for v in level.rho_beta) + "\n")
            fh.write(f"  negative log-likelihood: {_fmt(level.nll)}\n")


def cmd_fit(config, out, quiet) -> int:
    _, model = _fit_from_config(config)
    os.makedirs(out, exist_ok=True)
    save_model(model, out)
    report = os.path.join(out, "fit_report.txt")
    _write_fit_report(model, report)
    if not quiet:
        print(f"fitted {model.level_count} levels; model written to {out}")
        with open(report, "r", encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
    return EXIT_OK


def _predict_points(config) -> np.ndarray:
    if "points_file" in config:
        return load_points(config["points_file"])
    n = config.get("grid")
    if n is None:
        raise _ConfigError("config needs 'points_file' or 'grid'")
    if "bounds" in config:
        bounds = np.asarray(config["bounds"], dtype=float)
    elif "problem" in config:
        bounds = get_problem(config["problem"]).bounds
    else:
        raise _ConfigError("grid prediction needs 'bounds' or 'problem'")
    return product_grid(bounds, int(n))


def cmd_predict(config, out, quiet) -> int:
    model = load_model(_require(config, "model_dir"))
    points = _predict_points(config)
    if points.shape[0] and points.shape[1] != model.dimension:
        raise ValueError(
            f"points have dimension {points.shape[1]}, model has "
            f"{model.dimension}")
    s = model.level_count
    d = model.dimension
    header = ([f"x_{j}" for j in range(d)]
              + [f"mean_{t}" for t in range(1, s + 1)]
              + [f"var_{t}" for t in range(1, s + 1)]
              + [f"contrib_{t}" for t in range(1, s + 1)])
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "predictions.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        if points.shape[0]:
            pred = model.predict(points)
            for i in range(points.shape[0]):
                row = (list(points[i])
                       + list(pred.means[:, i])
                       + list(pred.variances[:, i])
                       + list(pred.contributions[:, i]))
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    if not quiet:
        print(f"wrote {points.shape[0]} predictions to {path}")
    return EXIT_OK


def cmd_sequential(config, out, quiet) -> int:
    problem = get_problem(_require(config, "problem"))
    _, model = _fit_from_config(config)
    budget = float(_require(config, "budget"))
    if budget <= 0:
        raise _ConfigError("budget must be positive")
    cost = CostModel(config.get("costs", problem.costs))
    simulators = [lambda x, t=t: problem.evaluate(t, x)
                  for t in range(1, problem.level_count + 1)]
    domain = Domain(problem.bounds)
    model, trace = run_loop(
        model, domain, cost, budget, simulators,
        rule=config.get("rule", "imse-threshold"),
        search=_search_from(config),
        quadrature=_quadrature_from(config),
        refit=config.get("refit", "never"),
        refit_seed=int(config.get("seed", 0)))
    os.makedirs(out, exist_ok=True)
    trace_path = os.path.join(out, "trace.csv")
    write_trace(trace, trace_path)
    model_dir = os.path.join(out, "model")
    save_model(model, model_dir)
    if not quiet:
        print(f"{len(trace)} iterations, trace in {trace_path}, "
              f"final model in {model_dir}")
    if not trace.complete:
        print("simulator failed; trace is partial", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_report(config, out, quiet) -> int:
    trace = read_trace(_require(config, "trace"))
    if "costs" in config:
        cost = CostModel(config["costs"])
        if cost.levels < trace.levels:
            raise ValueError("cost model has fewer levels than the trace")
        cum = 0.0
        for e in trace.entries:
            cum += cost.cost_through(e.level)
            if abs(cum - e.cumulative_cost) > 1e-9 * (1.0 + abs(cum)):
                raise ValueError(
                    f"iteration {e.iteration}: recomputed cumulative cost "
                    f"{cum} does not match stored {e.cumulative_cost}")
    os.makedirs(out, exist_ok=True)

    curve = os.path.join(out, "imse_vs_cost.csv")
    with open(curve, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("cum_cost,imse\n")
        if trace.entries:
            fh.write(f"0,{_fmt(trace.entries[0].imse_before)}\n")
            for e in trace.entries:
                fh.write(f"{_fmt(e.cumulative_cost)},{_fmt(e.imse_after)}\n")

    hist = os.path.join(out, "level_hist.csv")
    with open(hist, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level,count\n")
        if trace.entries:
            counts = {t: 0 for t in range(1, trace.levels + 1)}
            for e in trace.entries:
                counts[e.level] += 1
            for t in range(1, trace.levels + 1):
                fh.write(f"{t},{counts[t]}\n")
    if not quiet:
        print(f"wrote {curve} and {hist}")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "sequential": cmd_sequential,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfkrig",
        description="Multi-fidelity kriging: fit, predict, sequential design")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("fit", "fit a model and write its files"),
            ("predict", "evaluate a saved model on a grid or points file"),
            ("sequential", "run the sequential enrichment loop"),
            ("report", "derive plot-ready CSVs from a trace")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None,
                       help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed (overrides config)")
        p.add_argument("--quiet", action="store_true",
                       help="suppress informational output")
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["out"] = args.out
        out = config.get("out", "mfkrig-out")
        return _COMMANDS[args.command](config, out, args.quiet)
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MfkrigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
