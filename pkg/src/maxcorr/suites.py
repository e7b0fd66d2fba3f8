"""Property suites run on generated instances.

Each suite returns a list of :class:`~maxcorr.risk.CheckReport`. Tolerances
are fixed here, and each one is the sum of the terms it has to absorb:

* closed forms: round-off only (``1e-8`` to ``1e-10``);
* oracles: ``1e-10`` (both sides are exact finite computations);
* solver checks: ``SOLVER_TOL`` for prices converged to residual
  ``1e-3``, plus ``3 |m y| / sqrt(N)`` for a translation, which the
  fixed sample realizes with its own mean rather than the exact one.

``tol_scale`` multiplies every tolerance; it exists so that the failure
path can be exercised.
"""

from __future__ import annotations

import math

import numpy as np

from . import gaussian, oracle
from .risk import (
    CheckReport,
    Cone,
    MaxCorrMeasure,
    check_comonotone_additivity,
    check_cone_monotonicity,
    check_positive_homogeneity,
    check_subadditivity,
    check_translation_invariance,
)
from .transport import SolveConfig
from .types import Empirical, Gaussian, UniformCube, validate_empirical

SOLVER_TOL = 5e-3
SUITES = ("axioms", "oracle", "gaussian")


def _random_pd(rng, d):
    b = rng.uniform(-1, 1, (d, d))
    return b @ b.T + 0.1 * np.eye(d)


def _report(name, gap, tol, **details):
    return CheckReport(name, bool(gap <= tol), float(gap), float(tol), details)


def gaussian_suite(seed=0, trials=20, tol_scale=1.0):
    rng = np.random.default_rng(seed)
    out = []
    worst = {k: 0.0 for k in ("trace_norm", "scale", "additivity", "subadditivity", "location_scale",
                              "push_forward")}
    for _ in range(trials):
        d = int(rng.integers(2, 5))
        su, sx, sy = (_random_pd(rng, d) for _ in range(3))
        eig = np.linalg.eigvalsh(sx)
        worst["trace_norm"] = max(worst["trace_norm"], abs(
            gaussian.max_corr_gaussian(np.eye(d), sx) - np.sqrt(np.maximum(eig, 0)).sum()))
        lam = float(rng.uniform(0.1, 5))
        r = gaussian.max_corr_gaussian(su, sx)
        worst["scale"] = max(worst["scale"], abs(gaussian.max_corr_gaussian(su, lam**2 * sx) - lam * r))
        rs = gaussian.max_corr_gaussian(su, gaussian.comonotone_sum_covariance(su, sx, sy))
        worst["additivity"] = max(worst["additivity"], abs(rs - r - gaussian.max_corr_gaussian(su, sy)))
        ri = gaussian.max_corr_gaussian(su, sx + sy)
        worst["subadditivity"] = max(worst["subadditivity"], ri - r - gaussian.max_corr_gaussian(su, sy))
        m1 = gaussian.comonotone_cross_cov(su, sx, sy)
        m2 = gaussian.comonotone_cross_cov(lam**2 * su, sx, sy)
        worst["location_scale"] = max(worst["location_scale"], float(np.max(np.abs(m1 - m2))))
        worst["push_forward"] = max(worst["push_forward"], gaussian.pushforward_residual(su, sx))
    tols = {"trace_norm": 1e-10, "scale": 1e-8, "additivity": 1e-8, "subadditivity": 1e-10,
            "location_scale": 1e-8, "push_forward": 1e-8}
    for name, gap in worst.items():
        out.append(_report(f"gaussian_{name}", gap, tols[name] * tol_scale, trials=trials))
    return out


def oracle_suite(seed=0, trials=20, tol_scale=1.0):
    rng = np.random.default_rng(seed)
    tol = 1e-10 * tol_scale
    exhaustive, lp, one_d, probe, bound = 0.0, 0.0, 0.0, 0.0, -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(1, 4))
        u, y = rng.random((n, d)), rng.standard_normal((n, d))
        v_ex, _ = oracle.max_corr_assignment(u, y, "exhaustive")
        v_as, _ = oracle.max_corr_assignment(u, y, "assignment")
        v_lp, _ = oracle.max_corr_assignment(u, y, "lp")
        exhaustive = max(exhaustive, abs(v_ex - v_as))
        lp = max(lp, abs(v_lp - v_as))

        grid = (np.arange(n) + 0.5) / n
        target = validate_empirical(rng.standard_normal(n))
        v_grid, _ = oracle.max_corr_assignment(grid, target)
        v_quant = oracle.max_corr_1d_quantile(Empirical(validate_empirical(grid)), target)
        one_d = max(one_d, abs(v_grid - v_quant))

        m = int(rng.integers(2, 5))
        s, a, b = rng.random((m, 2)), rng.standard_normal((m, 2)), rng.standard_normal((m, 2))
        best, cert = oracle.structure_neutrality_probe(s, a, b)
        probe = max(probe, abs(best - cert["bound"]))
        bound = max(bound, cert["excess"])
    return [
        _report("assignment_vs_exhaustive", exhaustive, tol, trials=trials),
        _report("assignment_vs_lp", lp, tol, trials=trials),
        _report("assignment_vs_1d_quantile", one_d, tol, trials=trials),
        _report("structure_neutrality_attained", probe, tol, trials=trials),
        _report("structure_neutrality_bound", bound, tol, trials=trials),
    ]


def axiom_suite(seed=0, trials=1, tol_scale=1.0, cfg: SolveConfig | None = None):
    """Translation, homogeneity, subadditivity, cone monotonicity, comonotone additivity, law invariance."""
    cfg = cfg or SolveConfig(seed=seed)
    rng = np.random.default_rng(seed)
    root_n = math.sqrt(cfg.sample_count)
    out = []
    cube1, cube2 = MaxCorrMeasure(UniformCube(1), cfg), MaxCorrMeasure(UniformCube(2), cfg)
    gauss2 = MaxCorrMeasure(Gaussian.standard(2), cfg)
    for _ in range(trials):
        x1 = validate_empirical(rng.random((4, 1)))
        x2 = validate_empirical(rng.random((5, 2)))
        y, m = rng.standard_normal(2), float(rng.uniform(-2, 2))
        shift_tol = SOLVER_TOL + 3 * abs(m) * np.abs(y).sum() / root_n
        out.append(check_translation_invariance(cube2, x2, y, m, shift_tol * tol_scale))
        out.append(check_translation_invariance(cube1, x1, [1.0], 0.0, SOLVER_TOL * tol_scale))
        out.append(check_positive_homogeneity(cube2, x2, float(rng.uniform(0.2, 4)),
                                              SOLVER_TOL * tol_scale))
        rows = rng.standard_normal((6, 2))
        out.append(check_subadditivity(gauss2, rows, rng.standard_normal((6, 2)), SOLVER_TOL * tol_scale))
        out.append(check_subadditivity(gauss2, rows, rows, SOLVER_TOL * tol_scale))
        out.append(check_subadditivity(gauss2, rows, -rows, SOLVER_TOL * tol_scale))
        out.append(check_comonotone_additivity(UniformCube(1), x1, validate_empirical(rng.random((3, 1))),
                                               cfg, 2 * SOLVER_TOL * tol_scale))

    for base, gens, expected in (
        (UniformCube(2), [[1, 0], [0, 1]], True),
        (UniformCube(2), [[-1, 0]], False),
        (Gaussian.standard(2), [[1, 0]], False),
    ):
        r = check_cone_monotonicity(base, Cone(gens), SOLVER_TOL * tol_scale, cfg=cfg, trials=2, seed=seed)
        verdict_ok = r.details["condition"] == expected
        out.append(CheckReport(r.name, bool(r.passed and verdict_ok), r.gap, r.tol,
                               {**r.details, "expected_condition": expected}))

    out.append(law_invariance(cube2, rng))
    return out


def law_invariance(measure, rng):
    """Row order of the input must not change the value, bit for bit."""
    atoms = rng.random((6, measure.baseline.dim))
    weights = rng.dirichlet(np.ones(6))
    perm = rng.permutation(6)
    a = measure(validate_empirical(atoms, weights))
    b = measure(validate_empirical(atoms[perm], weights[perm]))
    gap = abs(a - b)
    return CheckReport("law_invariance", bool(gap == 0), gap, 0.0,
                       {"value": a, "permuted_value": b})


def run_suite(name, seed=0, trials=None, tol_scale=1.0, cfg=None):
    if name == "gaussian":
        return gaussian_suite(seed, trials or 20, tol_scale)
    if name == "oracle":
        return oracle_suite(seed, trials or 20, tol_scale)
    if name == "axioms":
        return axiom_suite(seed, trials or 1, tol_scale, cfg)
    raise ValueError(f"unknown suite {name!r}")
