"""Command-line front end.

Exit codes: 0 success, 1 bad configuration or input, 2 some grid rows
failed, 3 file could not be read or written.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
import warnings
from fractions import Fraction

from . import analytic, simulate, trace
from .model import ModelError, link_model

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {"n": "20", "r": "2", "lambda": "10", "alpha": "1", "d": "5", "tau": "15"}
CONFIG_KEYS = set(DEFAULTS)


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# -- value parsing ------------------------------------------------------------------

def _number(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def parse_grid(text: str, integer: bool = False) -> list:
    """Parse ``lo..hi[:step]`` ranges and comma lists, e.g. ``1..30``,
    ``0.5..2:0.5`` or ``1/8,1/4,1/2,1``. Ranges include both ends."""
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            raise ValueError(f"empty item in {text!r}")
        if ".." in part:
            span, _, step = part.partition(":")
            lo, _, hi = span.partition("..")
            lo, hi = _number(lo), _number(hi)
            step = _number(step) if step else Fraction(1)
            if step <= 0:
                raise ValueError(f"range step must be > 0 in {part!r}")
            if hi < lo:
                raise ValueError(f"empty range {part!r}")
            count = int((hi - lo) / step) + 1
            values.extend(lo + k * step for k in range(count))
        else:
            values.append(_number(part))
    if integer:
        if any(v.denominator != 1 for v in values):
            raise ValueError(f"expected integers in {text!r}")
        return [int(v) for v in values]
    return [float(v) for v in values]


def read_config(path: str) -> dict[str, str]:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().lower()
            if not sep or key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: expected one of {sorted(CONFIG_KEYS)} as key=value")
            out[key] = value.strip()
    return out


def _settings(args) -> dict[str, str]:
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key.replace("lambda", "lam"), None)
        if val is not None:
            merged[key] = val
    return merged


def _grid_flag(settings, key, integer=False, check=None, rule=""):
    flag = "--" + key
    try:
        values = parse_grid(settings[key], integer=integer)
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from None
    if check is not None:
        for v in values:
            if not check(v):
                raise ConfigError(f"{flag}: value {v:g} violates {rule}")
    return values


def _scenario_grids(settings):
    return {
        "n": _grid_flag(settings, "n", True, lambda v: v >= 2, "n >= 2"),
        "r": _grid_flag(settings, "r", False, lambda v: v >= 1, "r >= 1"),
        "lambda": _grid_flag(settings, "lambda", False, lambda v: v > 0, "lambda > 0 (and lambda >= 1/r)"),
        "alpha": _grid_flag(settings, "alpha", False, lambda v: v > 0, "alpha > 0"),
        "d": _grid_flag(settings, "d", True, lambda v: v >= 1, "d >= 1"),
    }


def _single(settings, key, integer=False, check=None, rule=""):
    values = _grid_flag(settings, key, integer, check, rule)
    if len(values) != 1:
        raise ConfigError(f"--{key}: expected a single value, got {settings[key]!r}")
    return values[0]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ICMN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"ICMN_SEED must be an integer (got {env!r})") from None


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _load_trace(args):
    if not args.trace:
        raise ConfigError("--trace is required")
    return trace.read_trace(args.trace, args.format)


# -- subcommands ------------------------------------------------------------------------

def cmd_analytic(args) -> int:
    grids = _scenario_grids(_settings(args))
    rows = analytic.sweep(analytic.grid(**grids))
    with _output(args.out) as fh:
        analytic.write_sweep_csv(rows, fh)
    failed = [r for r in rows if r.error is not None]
    for r in failed:
        print(f"row n={r.n} r={r.r:g} lambda={r.lam:g} alpha={r.alpha:g} d={r.d}: {r.error}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


SIMULATE_HEADER = ("n", "r", "lambda", "alpha", "d", "trials", "successes", "ratio", "half_width_95", "seed")


def cmd_simulate(args) -> int:
    grids = _scenario_grids(_settings(args))
    if args.trials < 1:
        raise ConfigError(f"--trials: must be >= 1 (got {args.trials})")
    seed = _seed(args)
    points = list(analytic.grid(**grids))
    # validate every link model before running anything
    models = {}
    for p in points:
        key = (p["r"], p["lambda"])
        if key not in models:
            try:
                models[key] = link_model(*key)
            except ModelError as exc:
                raise ConfigError(f"--r/--lambda: {exc}") from None
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIMULATE_HEADER)
        for p in points:
            est = simulate.mc_delivery_ratio(
                p["n"], models[(p["r"], p["lambda"])], p["alpha"], p["d"], args.trials, seed
            )
            w.writerow((
                p["n"], repr(p["r"]), repr(p["lambda"]), repr(p["alpha"]), p["d"],
                est.trials, est.successes, repr(est.ratio), repr(est.half_width_95), seed,
            ))
    return EXIT_OK


def cmd_generate(args) -> int:
    settings = _settings(args)
    n = _single(settings, "n", True, lambda v: v >= 2, "n >= 2")
    r = _single(settings, "r", False, lambda v: v >= 1, "r >= 1")
    lam = _single(settings, "lambda", False, lambda v: v > 0, "lambda > 0")
    tau = _single(settings, "tau", False, lambda v: v > 0, "tau > 0")
    if args.steps < 1:
        raise ConfigError(f"--steps: must be >= 1 (got {args.steps})")
    try:
        m = link_model(r, lam)
    except ModelError as exc:
        raise ConfigError(f"--lambda: {exc}") from None
    g = simulate.generate_graph(n, m, args.steps, _seed(args), tau=tau)
    with _output(args.out) as fh:
        trace.dump_events(g, fh)
    return EXIT_OK


def cmd_stats(args) -> int:
    tau = _single(_settings(args), "tau", False, lambda v: v > 0, "tau > 0")
    tr = _load_trace(args)
    stats = trace.link_stats(tr)
    est = None
    if stats.mean_intercontact is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", trace.TraceWarning)
            est = trace.estimate_model(stats, tau)
    with _output(args.out) as fh:
        trace.write_stats_csv(stats, tau, fh, est)
    return EXIT_OK


MAX_ALPHA_HEADER = ("d", "target_ratio", "max_alpha")


def cmd_replay(args) -> int:
    settings = _settings(args)
    tau = _single(settings, "tau", False, lambda v: v > 0, "tau > 0")
    alphas = _grid_flag(settings, "alpha", False, lambda v: v > 0, "alpha > 0")
    ds = _grid_flag(settings, "d", True, lambda v: v >= 1, "d >= 1")
    if args.pairs < 1:
        raise ConfigError(f"--pairs: must be >= 1 (got {args.pairs})")
    if args.spacing < 1:
        raise ConfigError(f"--spacing: must be >= 1 (got {args.spacing})")
    if not 0 < args.threshold <= 1:
        raise ConfigError(f"--threshold: must lie in (0, 1] (got {args.threshold})")
    seed = _seed(args)
    g = trace.discretize(_load_trace(args), tau, args.threshold)
    with _output(args.out) as fh:
        if args.target_ratio is not None:
            grid = sorted(alphas)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MAX_ALPHA_HEADER)
            for d in ds:
                sched = trace.make_schedule(g, d, args.start_window, args.pairs, seed, args.spacing)
                best = trace.max_alpha_for_target(g, sched, args.target_ratio, d, grid)
                w.writerow((d, repr(args.target_ratio), "" if best is None else repr(best)))
        else:
            reports = []
            for d in ds:
                sched = trace.make_schedule(g, d, args.start_window, args.pairs, seed, args.spacing)
                reports.extend(trace.replay_experiment(g, sched, a, d) for a in alphas)
            trace.write_replay_csv(reports, fh, per_start=not args.summary_only)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def _scenario_flags(p, *keys):
    helps = {
        "n": "node count, grid allowed (default 20)",
        "r": "mean link lifetime in steps, grid allowed (default 2)",
        "lambda": "down-time / up-time ratio, grid allowed (default 10)",
        "alpha": "packet size in link capacities, grid allowed (default 1)",
        "d": "delay budget in steps, grid allowed (default 5)",
        "tau": "step length in seconds (default 15)",
    }
    for key in keys:
        dest = "lam" if key == "lambda" else key
        p.add_argument(f"--{key}", dest=dest, default=None, help=helps[key])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icmn", description="Epidemic delivery ratio vs packet size and delay.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analytic", help="exact values or bounds from the absorbing chain")
    _scenario_flags(p, "n", "r", "lambda", "alpha", "d", "tau")

    p = sub.add_parser("simulate", help="Monte Carlo estimate on random Markovian graphs")
    _scenario_flags(p, "n", "r", "lambda", "alpha", "d", "tau")
    p.add_argument("--trials", type=int, default=10000)

    p = sub.add_parser("generate", help="write a random Markovian trace as event-csv")
    _scenario_flags(p, "n", "r", "lambda", "tau")
    p.add_argument("--steps", type=int, default=1000)

    p = sub.add_parser("stats", help="contact statistics and fitted (r, lambda) of a trace")
    _scenario_flags(p, "tau")

    p = sub.add_parser("replay", help="epidemic delivery ratio replayed on a trace")
    _scenario_flags(p, "alpha", "d", "tau")
    p.add_argument("--start-window", type=float, default=2000.0, help="seconds during which runs start")
    p.add_argument("--pairs", type=int, default=60, help="source/destination pairs per start")
    p.add_argument("--spacing", type=int, default=1, help="steps between successive starts")
    p.add_argument("--target-ratio", type=float, default=None,
                   help="report the largest alpha reaching this ratio for each d")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="fraction of a step a contact must cover to count")
    p.add_argument("--summary-only", action="store_true", help="only the aggregate row per (alpha, d)")

    for name, p in sub.choices.items():
        p.add_argument("--config", default=None, help="key=value file (n, tau, alpha, d, r, lambda)")
        p.add_argument("--out", default=None, help="output CSV path (default stdout)")
        if name in ("simulate", "generate", "replay"):
            p.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $ICMN_SEED, then 0)")
        if name in ("stats", "replay"):
            p.add_argument("--trace", default=None, help="contact trace file")
            p.add_argument("--format", default="interval-csv", choices=sorted(trace.FORMATS))
    return parser


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "stats": cmd_stats,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelError, trace.TraceError) as exc:
        print(f"icmn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"icmn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
