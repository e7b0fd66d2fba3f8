"""Command-line front end: ``maxcorr {gaussian,solve,es,check,oracle}``.

Reports go to stdout as JSON, errors to stderr as JSON. Exit codes:
0 success, 2 invalid input, 3 numerical failure, 4 no convergence,
5 a check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, csvio, gaussian, oracle, risk, suites, transport
from .types import (
    BernoulliVector,
    ConvergenceError,
    Empirical,
    Gaussian,
    MaxCorrError,
    NumericalError,
    UniformCube,
    ValidationError,
    sample_baseline,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_NONCONVERGENCE, EXIT_CHECK = 0, 2, 3, 4, 5
SEED_ENV = "MAXCORR_SEED"
PARTITION_STREAM = 11


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _emit(payload, args):
    if not getattr(args, "no_meta", False):
        payload = {**payload, "meta": {"version": __version__, "command": args.command,
                                       "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}}
    json.dump(payload, sys.stdout, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
    sys.stdout.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# gaussian
# ---------------------------------------------------------------------------


def cmd_gaussian(args):
    su = csvio.read_matrix(args.sigma_u)
    if args.sigma_x is not None:
        sx = csvio.read_matrix(args.sigma_x)
    elif args.sample_x is not None:
        sx = gaussian.sample_covariance(csvio.read_table(args.sample_x))
    else:
        raise ValidationError("one of --sigma-x or --sample-x is required")
    out = {
        "rho": gaussian.max_corr_gaussian(su, sx),
        "a_x": gaussian.brenier_map_gaussian(su, sx),
        "a_x_residual": gaussian.pushforward_residual(su, sx),
        "dims": int(su.shape[0]),
    }
    if args.sigma_y is not None:
        sy = csvio.read_matrix(args.sigma_y)
        out["rho_y"] = gaussian.max_corr_gaussian(su, sy)
        if args.cross:
            out["cross_cov"] = gaussian.comonotone_cross_cov(su, sx, sy)
            out["rho_comonotone_sum"] = gaussian.max_corr_gaussian(
                su, gaussian.comonotone_sum_covariance(su, sx, sy))
    elif args.cross:
        raise ValidationError("--cross needs --sigma-y")
    return out, EXIT_OK


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


_CFG_FLAGS = {"samples": "sample_count", "seed": "seed", "tol": "tol_residual",
              "max_iters": "max_iters", "init": "init", "workers": "workers",
              "resample": "resample_each_iter"}


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    return data


def build_config(args) -> transport.SolveConfig:
    """Config file values, overridden by any flag given on the command line."""
    d = _load_config(args.config)
    for flag, key in _CFG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            d[key] = value
    d.setdefault("seed", _default_seed())
    if args.step is not None:
        rule = {"kind": args.step}
        if args.eps is not None:
            rule["eps" if args.step == "fixed" else "eps0"] = args.eps
        d["step_rule"] = rule
    elif args.eps is not None:
        raise ValidationError("--eps needs --step")
    try:
        return transport.SolveConfig.from_dict(d)
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from None


def _baseline(args, dim):
    kind = args.baseline
    if kind == "cube":
        return UniformCube(dim)
    if kind == "gauss":
        cov = np.eye(dim) if args.sigma_u is None else csvio.read_matrix(args.sigma_u)
        return Gaussian(cov)
    if kind == "bernoulli":
        if args.alpha is None:
            raise ValidationError("--baseline bernoulli needs --alpha")
        return BernoulliVector(dim, args.alpha)
    if kind == "file":
        if args.baseline_file is None:
            raise ValidationError("--baseline file needs --baseline-file")
        return Empirical(csvio.read_atoms(args.baseline_file))
    raise ValidationError(f"unknown baseline {kind!r}")


def _partition_points(args, baseline, dim):
    if args.partition_grid is not None:
        if dim > 3:
            raise ValidationError("--partition-grid supports dimension <= 3")
        g = args.partition_grid
        if isinstance(baseline, UniformCube):
            axis = (np.arange(g) + 0.5) / g
        else:
            axis = np.linspace(-3, 3, g)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
    return sample_baseline(baseline, args.partition_samples, args.seed_value, stream=PARTITION_STREAM)


def cmd_solve(args):
    target = csvio.read_atoms(args.target)
    baseline = _baseline(args, target.dim)
    if isinstance(baseline, BernoulliVector):
        es = risk.expected_shortfall_breakdown(target, baseline.alpha)
        return {"rho": es.value / baseline.alpha, "method": "shortfall", "expected_shortfall": es.value,
                "cutoff_c": es.cutoff, "boundary_fraction": es.boundary_fraction,
                "alpha": baseline.alpha, "converged": True}, EXIT_OK
    cfg = build_config(args)
    args.seed_value = cfg.seed
    report = transport.tatonnement(baseline, target, cfg)
    out = {"rho": report.risk_value, "method": "transport", "config": cfg.to_dict(), **report.to_dict()}
    if args.dump_trace:
        rows = np.column_stack([np.arange(len(report.objective_trace)), report.objective_trace,
                                report.residual_trace])
        csvio.write_table(args.dump_trace, ["iter", "objective", "residual"], rows)
    if args.dump_partition:
        pts = _partition_points(args, baseline, target.dim)
        table = transport.partition_table(report, target, pts)
        header = [f"u{i + 1}" for i in range(target.dim)] + ["atom", "potential"]
        csvio.write_table(args.dump_partition, header, table)
    return out, EXIT_OK if report.converged else EXIT_NONCONVERGENCE


# ---------------------------------------------------------------------------
# es, check, oracle
# ---------------------------------------------------------------------------


def cmd_es(args):
    target = csvio.read_atoms(args.target)
    return risk.expected_shortfall_breakdown(target, args.alpha).to_dict(), EXIT_OK


def cmd_check(args):
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = None
    if args.config is not None:
        d = {"seed": seed, **_load_config(args.config)}
        if args.seed is not None:
            d["seed"] = args.seed
        cfg = transport.SolveConfig.from_dict(d)
        seed = cfg.seed
    reports = suites.run_suite(args.suite, seed=seed, trials=args.trials, tol_scale=args.tol_scale, cfg=cfg)
    passed = all(r.passed for r in reports)
    out = {"suite": args.suite, "seed": seed, "passed": passed, "checks": [r.to_dict() for r in reports]}
    return out, EXIT_OK if passed else EXIT_CHECK


_QUANTILES = {"uniform": lambda a: UniformCube(1), "gauss": lambda a: Gaussian(np.eye(1)),
              "bernoulli": lambda a: BernoulliVector(1, a)}


def cmd_oracle(args):
    target = csvio.read_atoms(args.target)
    if args.quantile is not None:
        if args.quantile == "bernoulli" and args.alpha is None:
            raise ValidationError("--quantile bernoulli needs --alpha")
        base = _QUANTILES[args.quantile](args.alpha)
        return {"value": oracle.max_corr_1d_quantile(base, target), "method": "quantile"}, EXIT_OK
    if args.source is None:
        raise ValidationError("one of --source or --quantile is required")
    source = csvio.read_atoms(args.source)
    value, coupling = oracle.max_corr_assignment(source, target, args.method)
    c = coupling.tocoo()
    order = np.lexsort((c.col, c.row))
    triplets = [[int(c.row[i]), int(c.col[i]), float(c.data[i])] for i in order]
    return {"value": value, "method": args.method, "coupling": triplets,
            "source_atoms": source.atoms, "target_atoms": target.atoms}, EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _solver_flags(p):
    p.add_argument("--config", help="JSON file with SolveConfig fields; explicit flags win")
    p.add_argument("--samples", type=int, help="Monte Carlo sample count N (>= 1000)")
    p.add_argument("--seed", type=int, help=f"RNG seed (default ${SEED_ENV} or 0)")
    p.add_argument("--tol", type=float, help="stopping threshold on max |pi - p|")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--step", choices=sorted(transport.STEP_RULES))
    p.add_argument("--eps", type=float, help="step size (fixed) or initial step (decay, backtracking)")
    p.add_argument("--init", choices=["moment", "zero"])
    p.add_argument("--workers", type=int)
    p.add_argument("--resample", action="store_const", const=True,
                   help="draw a fresh sample every iteration (fixed or decay step only)")


def build_parser():
    parser = _Parser(prog="maxcorr", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log solver iterations to stderr")
    parser.add_argument("--no-meta", action="store_true", help="omit version and timestamp from output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gaussian", help="closed forms for centered Gaussian risks")
    g.add_argument("--sigma-u", required=True)
    g.add_argument("--sigma-x")
    g.add_argument("--sample-x", help="CSV of sample rows; its sample covariance is used as sigma_x")
    g.add_argument("--sigma-y")
    g.add_argument("--cross", action="store_true", help="also emit the comonotone cross-covariance")

    s = sub.add_parser("solve", help="semi-discrete transport against a baseline")
    s.add_argument("--baseline", choices=["cube", "gauss", "bernoulli", "file"], default="cube")
    s.add_argument("--baseline-file", help="atoms CSV for --baseline file")
    s.add_argument("--target", required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--sigma-u")
    _solver_flags(s)
    s.add_argument("--dump-partition", help="CSV of (u, atom, potential) rows")
    s.add_argument("--partition-grid", type=int, help="dump on a regular grid with this many points per axis")
    s.add_argument("--partition-samples", type=int, default=20_000)
    s.add_argument("--dump-trace", help="CSV of (iter, objective, residual) rows")

    e = sub.add_parser("es", help="multivariate expected shortfall")
    e.add_argument("--target", required=True)
    e.add_argument("--alpha", type=float, required=True)

    c = sub.add_parser("check", help="run a property suite")
    c.add_argument("--suite", choices=suites.SUITES, required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--trials", type=int)
    c.add_argument("--config", help="JSON SolveConfig for the axiom suite")
    c.add_argument("--tol-scale", type=float, default=1.0, help=argparse.SUPPRESS)

    o = sub.add_parser("oracle", help="brute-force maximal correlation")
    o.add_argument("--target", required=True)
    o.add_argument("--source", help="atoms CSV of a discrete baseline")
    o.add_argument("--quantile", choices=sorted(_QUANTILES), help="one-dimensional built-in baseline")
    o.add_argument("--alpha", type=float)
    o.add_argument("--method", choices=["auto", "exhaustive", "assignment", "lp"], default="auto")
    return parser


_COMMANDS = {"gaussian": cmd_gaussian, "solve": cmd_solve, "es": cmd_es, "check": cmd_check,
             "oracle": cmd_oracle}


def _fail(code, exc):
    kind = {EXIT_INPUT: "validation", EXIT_NUMERICAL: "numerical",
            EXIT_NONCONVERGENCE: "convergence"}.get(code, "error")
    json.dump({"error": kind, "message": str(exc)}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        out, code = _COMMANDS[args.command](args)
        _emit(out, args)
        return code
    except ValidationError as exc:
        return _fail(EXIT_INPUT, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except ConvergenceError as exc:
        return _fail(EXIT_NONCONVERGENCE, exc)
    except MaxCorrError as exc:
        return _fail(EXIT_INPUT, exc)
    except ValueError as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
