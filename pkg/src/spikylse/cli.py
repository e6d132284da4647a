"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 solver
non-convergence above the allowed fraction (or a failed numeric check for
``certify`` and ``verify-bounds``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
import tomli

from . import __version__, bounds
from .certificate import SignPattern, solve_certificate, validate_certificate
from .errors import ConfigError, ConstructionFailedError, InfeasibleSeparationError
from .harness import (ExperimentConfig, emit_artifacts, monotonicity_violations,
                      run_phase_transition)
from .signal_model import sample_sources, sample_spikes

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("spikylse")

_EXPERIMENT_FLAGS = ("n", "r_values", "s_values", "lam", "trials", "delta_min", "seed",
                     "spike_mode", "points_per_axis", "peak_tol", "sat_tol", "amp_tol",
                     "max_failure_fraction")
_SOLVER_FLAGS = {"max_iter": "max_iter", "rho": "rho", "relaxation": "relaxation",
                 "solver_seed": "seed", "tol_psd": "tol_psd", "tol_obj": "tol_obj",
                 "tol_dual": "tol_dual"}


def _number_or_keyword(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def _add_experiment_flags(p: argparse.ArgumentParser, cell: bool) -> None:
    p.add_argument("--config", help="TOML file with [experiment] and [solver] tables")
    p.add_argument("--n", type=int)
    if cell:
        p.add_argument("--r", dest="r_values", type=int)
        p.add_argument("--s", dest="s_values", type=int)
    else:
        p.add_argument("--r-values", help='e.g. "1-5" or "1,2,4"')
        p.add_argument("--s-values")
    p.add_argument("--lambda", dest="lam", type=_number_or_keyword,
                   help='positive number or "theorem" (1/n)')
    p.add_argument("--trials", type=int)
    p.add_argument("--delta-min", type=_number_or_keyword,
                   help='number, "fig2" (3/(n-1)) or "theorem" (3.36/(n-1))')
    p.add_argument("--seed", type=int)
    p.add_argument("--spike-mode", choices=("exact", "bernoulli"))
    p.add_argument("--points-per-axis", type=int)
    p.add_argument("--peak-tol", type=float)
    p.add_argument("--sat-tol", type=float)
    p.add_argument("--amp-tol", type=float)
    p.add_argument("--max-failure-fraction", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--relaxation", type=float)
    p.add_argument("--solver-seed", type=int)
    p.add_argument("--tol-psd", type=float)
    p.add_argument("--tol-obj", type=float)
    p.add_argument("--tol-dual", type=float)
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--force", action="store_true", help="overwrite an existing run")
    p.add_argument("--jobs", type=int, default=1)


def load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then command-line flags, then the config file on top."""
    exp = {k: getattr(args, k) for k in _EXPERIMENT_FLAGS if getattr(args, k, None) is not None}
    solver = {v: getattr(args, k) for k, v in _SOLVER_FLAGS.items()
              if getattr(args, k, None) is not None}
    if args.config:
        data = load_toml(args.config)
        unknown = set(data) - {"experiment", "solver"}
        if unknown:
            raise ConfigError(f"unknown config tables: {sorted(unknown)}")
        exp.update(data.get("experiment", {}))
        solver.update(data.get("solver", {}))
    return ExperimentConfig.from_mapping({**exp, "solver": solver})


def _summary_line(rec) -> str:
    return json.dumps({"r": rec.r, "s": rec.s, "trial": rec.trial_index,
                       "success": rec.success, "nmse": rec.result["nmse"],
                       "converged": rec.solver["converged"],
                       "iterations": rec.solver["iterations"]})


def _experiment(args, cell: bool) -> int:
    config = build_config(args)
    res = run_phase_transition(config, jobs=args.jobs)
    if cell:
        for rec in res.records:
            print(_summary_line(rec))
    for (r, s), rate in sorted(res.table.items()):
        print(f"r={r} s={s} success_rate={rate:.3f}")
    if not cell:
        monotonicity_violations(res.table, config.trials)
    if args.out:
        emit_artifacts(res.records, res.table, args.out, config, force=args.force)
    frac = res.nonconverged_fraction
    if frac > config.max_failure_fraction:
        log.error("%.1f%% of solves did not converge", 100 * frac)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_single(args) -> int:
    return _experiment(args, cell=True)


def cmd_phase(args) -> int:
    return _experiment(args, cell=False)


def cmd_certify(args) -> int:
    m = args.m
    n = 2 * m + 1
    delta = args.delta_min if args.delta_min is not None else 3.36 / (2 * m)
    rng = np.random.default_rng(args.seed)
    atoms = sample_sources(args.r, n, delta, rng)
    omega = sample_spikes(args.s, n, rng).support
    ok = True
    for i in range(args.patterns):
        signs = SignPattern.random(args.r, args.s, rng)
        try:
            cert = solve_certificate(atoms.freqs, omega, signs, n)
        except ConstructionFailedError as exc:
            print(json.dumps({"pattern": i, "error": str(exc)}))
            ok = False
            continue
        rep = validate_certificate(cert, grid_points_per_axis=args.grid)
        ok &= rep.all_pass
        print(json.dumps({"pattern": i, "all_pass": rep.all_pass, **json.loads(rep.to_json())}))
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_verify_bounds(args) -> int:
    checks = bounds.run_all(args.m, seed=args.seed)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SOLVER


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikylse",
                                description="2-D line spectral estimation under spiky noise")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("single", help="repeated trials of one (r, s) cell")
    _add_experiment_flags(sp, cell=True)
    sp.set_defaults(func=cmd_single)

    sp = sub.add_parser("phase", help="success-rate grid over r and s")
    _add_experiment_flags(sp, cell=False)
    sp.set_defaults(func=cmd_phase)

    sp = sub.add_parser("certify", help="build and validate explicit dual certificates")
    sp.add_argument("--m", type=int, default=50)
    sp.add_argument("--r", type=int, default=3)
    sp.add_argument("--s", type=int, default=0)
    sp.add_argument("--delta-min", type=float)
    sp.add_argument("--patterns", type=int, default=10)
    sp.add_argument("--grid", type=int, default=1024)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("verify-bounds", help="kernel constants and interpolation bounds")
    sp.add_argument("--m", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify_bounds)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InfeasibleSeparationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
