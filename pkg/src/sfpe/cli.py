"""Command-line runner: ``sfpe --config run.cfg [--output DIR] [--seed N]
[--threads N] [--budget N]``.

Each run writes ``results.csv`` (byte-identical for identical settings,
whatever the thread count) and ``timing.csv`` (wall-clock times) into the
output directory.  Exit status: 0 on success, 2 for configuration errors,
3 for runtime failures including a refused budget.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, parse_config
from .errors import BudgetExceeded, ConfigurationError, SfpeError
from .estimators import Estimate, estimate_gradient_bel, estimate_value
from .picard import PicardConfig, solve, terminal_value
from .problem import LyapunovVq, lyapunov_rho_bound
from .reports import to_csv
from .sde import TimeGrid
from .verification import (SUITE_COLUMNS, MomentCertificate, ConvergenceTable,
                           convergence_study, moment_certificates, verification_suite)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ESTIMATE_COLUMNS = ("t", "x", "component", "mean", "stderr", "n_samples", "exact")


def _estimate_rows(t, x, est: Estimate, exact=None, offset=0):
    mean = np.atleast_1d(est.mean)
    se = np.atleast_1d(est.stderr)
    for k in range(mean.size):
        ex = "" if exact is None else float(exact[k])
        yield (t, np.asarray(x, float), k + offset, mean[k], se[k], est.n_samples, ex)


def _exact(spec, t, x):
    if spec.solution is None:
        return None
    return np.asarray(spec.solution(np.array([t]), np.asarray(x, float)[None]), float)[0]


def _picard_config(cfg, budget=None):
    return PicardConfig(cfg.depth, cfg.samples_per_level[:cfg.depth] if cfg.scheme == "plain"
                        else cfg.samples_per_level[-cfg.depth:], cfg.picard_steps,
                        cfg.picard_quadrature, cfg.scheme, budget if budget is not None else cfg.budget)


def execute(cfg, workers=1, budget=None):
    """Run the configured command; return ``(columns, rows, summary)``."""
    spec = cfg.build_problem()
    t, x = cfg.t, np.asarray(cfg.x, float)
    grid = TimeGrid.default(t, spec.T, cfg.grid_steps) if t < spec.T else None
    mc = dict(n_paths=cfg.n_paths, grid=grid, rng=cfg.seed, antithetic=cfg.antithetic,
              workers=workers)
    exact = _exact(spec, t, x) if t < spec.T else None
    if cfg.command == "value":
        def h(s, y):
            return spec.nonlinearity_at_zero(s, y)
        est = estimate_value(spec, t, x, h=h, **mc)
        rows = list(_estimate_rows(t, x, est, None if exact is None else exact[:1]))
        return ESTIMATE_COLUMNS, rows, f"value {float(est.mean):.6g} +- {float(est.stderr):.2g}"
    if cfg.command == "gradient":
        est = estimate_gradient_bel(spec, t, x, **mc)
        rows = list(_estimate_rows(t, x, est, None if exact is None else exact[1:], offset=1))
        return ESTIMATE_COLUMNS, rows, f"gradient {np.array2string(est.mean, precision=5)}"
    if cfg.command == "solve":
        if t == spec.T:
            res = terminal_value(spec, x)
        else:
            res = solve(spec, t, x, _picard_config(cfg, budget), cfg.seed, workers)
        rows = [(t, x, k, res.vg[k], res.stderr[k], res.n_samples,
                 "" if exact is None else exact[k]) for k in range(res.vg.size)]
        return ESTIMATE_COLUMNS, rows, (f"solve v={res.value:.6g} cost={res.cost} path-steps")
    if cfg.command == "verify":
        suite = verification_suite(spec, rng=cfg.seed, n_paths=cfg.n_paths, q=cfg.q,
                                   workers=workers)
        n_fail = sum(not r[-1] for r in suite.rows)
        return SUITE_COLUMNS, suite.rows, (f"verify {len(suite.rows)} checks, "
                                           f"{n_fail} failed")
    if cfg.command == "converge":
        base = _picard_config(cfg, budget)
        if cfg.axis == "n_paths" and cfg.depth == 1:
            base = PicardConfig(1, (cfg.n_paths,), cfg.grid_steps, cfg.quadrature,
                                cfg.scheme, base.budget)
        elif cfg.axis == "grid_steps":
            base = PicardConfig(cfg.depth, base.samples_per_level, cfg.grid_steps,
                                cfg.quadrature, cfg.scheme, base.budget)
        table: ConvergenceTable = convergence_study(spec, t, x, cfg.axis, cfg.values,
                                                    cfg.seed, base, workers=workers)
        summary = f"converge {cfg.axis} over {len(table.rows)} values"
        if len(table.rows) > 1 and cfg.axis == "n_paths":
            summary += f", stderr slope {table.slope():.3f}"
        return ConvergenceTable.CSV_COLUMNS, list(table.csv_rows()), summary
    if cfg.command == "moments":
        rho = lyapunov_rho_bound(spec, cfg.q) if cfg.rho is None else cfg.rho
        horizons = cfg.horizons or tuple(t + (spec.T - t) * f for f in (0.25, 0.5, 1.0))
        certs = moment_certificates(spec, LyapunovVq(cfg.q), rho, t, x, horizons,
                                    cfg.n_paths, cfg.seed, workers=workers)
        n_fail = sum(not c.passed for c in certs)
        return (MomentCertificate.CSV_COLUMNS, [c.csv_row() for c in certs],
                f"moments rho={rho:.4g}, {n_fail} of {len(certs)} horizons failed")
    raise ConfigError(f"unknown command {cfg.command!r}", "command")


def run(cfg, workers=1, budget=None, out=None):
    """Execute ``cfg`` and write its CSV files; return the exit status."""
    start = time.perf_counter()
    try:
        columns, rows, summary = execute(cfg, workers, budget)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SfpeError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    elapsed = time.perf_counter() - start
    meta = f"sfpe {__version__} seed={cfg.seed} config_hash={cfg.digest()}"
    outdir = cfg.output if os.path.isabs(cfg.output) else os.path.join(cfg.base_dir, cfg.output)
    try:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "results.csv"), "w", encoding="utf-8") as fh:
            fh.write(to_csv(columns, rows, meta))
        with open(os.path.join(outdir, "timing.csv"), "w", encoding="utf-8") as fh:
            fh.write(to_csv(("command", "workers", "wall_seconds"),
                            [(cfg.command, workers, elapsed)], meta))
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.command} [{cfg.problem}] {summary} -> {os.path.join(outdir, 'results.csv')}",
          file=out or sys.stdout)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="sfpe", description="Monte-Carlo solvers and verification for semilinear "
                                 "Kolmogorov PDEs.")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--output", help="output directory (overrides [run] output)")
    p.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; results do not depend on it")
    p.add_argument("--budget", type=int, help="maximum predicted path-steps for solve")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, base_dir=os.path.dirname(os.path.abspath(args.config)))
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer", "seed")
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        if args.budget is not None and args.budget < 1:
            raise ConfigError("--budget must be positive")
        output = None if args.output is None else os.path.abspath(args.output)
        cfg = cfg.with_overrides(seed=args.seed, output=output)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, workers=args.threads, budget=args.budget)


if __name__ == "__main__":
    sys.exit(main())
