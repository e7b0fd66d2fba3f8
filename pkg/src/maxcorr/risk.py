"""Risk measures built on maximal correlation, and checkers for their axioms.

A :class:`MaxCorrMeasure` evaluates ``rho_mu`` for one baseline, choosing
the route from the inputs:

* Gaussian baseline and :class:`GaussianRisk` target: trace-norm closed form;
* Bernoulli baseline: the expected shortfall of the coordinate sum;
* a single atom ``y``: ``<mean(mu), y>``;
* anything else: the semi-discrete transport solver.

The ``check_*`` functions return a :class:`CheckReport` and never mutate
their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gaussian, transport
from .types import (
    BaselineMeasure,
    BernoulliVector,
    ConvergenceError,
    Empirical,
    EmpiricalDistribution,
    Gaussian,
    GaussianRisk,
    MaxCorrError,
    UniformCube,
    ValidationError,
    from_samples,
    sample_baseline,
    validate_empirical,
)
from .transport import SolveConfig

# ---------------------------------------------------------------------------
# Multivariate expected shortfall
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShortfallBreakdown:
    value: float
    cutoff: float
    boundary_fraction: float
    alpha: float

    def to_dict(self):
        return {"rho": self.value, "cutoff_c": self.cutoff,
                "boundary_fraction": self.boundary_fraction, "alpha": self.alpha}


def _check_alpha(alpha):
    if not (isinstance(alpha, (int, float, np.floating)) and 0.0 < alpha < 1.0):
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def expected_shortfall_breakdown(target: EmpiricalDistribution, alpha: float) -> ShortfallBreakdown:
    """Upper-tail mass-``alpha`` integral of ``s = sum_i X_i`` with its cutoff.

    ``c`` is the smallest value with ``P(s >= c) >= alpha``. The atoms strictly
    above ``c`` are counted fully and the level ``c`` receives the remaining
    mass ``gamma = alpha - P(s > c)``; ``boundary_fraction`` is ``gamma``
    over the total weight sitting at ``c``.
    """
    alpha = _check_alpha(alpha)
    s = target.atoms.sum(axis=1)
    levels, inverse = np.unique(s, return_inverse=True)
    mass = np.bincount(inverse.ravel(), weights=target.weights)
    levels, mass = levels[::-1], mass[::-1]
    above = np.concatenate([[0.0], np.cumsum(mass)[:-1]])
    k = int(np.searchsorted(above + mass, alpha, side="left"))
    k = min(k, levels.size - 1)
    gamma = alpha - above[k]
    value = float(levels[:k] @ mass[:k] + gamma * levels[k])
    return ShortfallBreakdown(value, float(levels[k]), float(gamma / mass[k]), alpha)


def expected_shortfall_mv(target: EmpiricalDistribution, alpha: float) -> float:
    """``E[S 1{S >= c}]`` for ``S = sum_i X_i`` with exactly mass ``alpha`` counted."""
    return expected_shortfall_breakdown(target, alpha).value


def max_corr_bernoulli(target: EmpiricalDistribution, alpha: float) -> float:
    """``sup E[<X, U>]`` for the Bernoulli baseline, i.e. ``expected_shortfall_mv / alpha``."""
    return expected_shortfall_mv(target, alpha) / _check_alpha(alpha)


# ---------------------------------------------------------------------------
# Measure handle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    value: float
    method: str
    converged: bool = True
    report: transport.SolveReport | None = None


@dataclass(frozen=True, eq=False)
class MaxCorrMeasure:
    """``rho_mu`` for a fixed baseline, with the solver settings used for it."""

    baseline: BaselineMeasure
    cfg: SolveConfig = field(default_factory=SolveConfig)

    def evaluate(self, target, shift=None) -> Evaluation:
        """Value for ``target`` (+ ``shift``, a constant vector, if given).

        A shift of a Gaussian risk is applied through ``rho(X + y) = rho(X) + <mean(mu), y>``
        since :class:`GaussianRisk` is centered; a shift of an empirical target
        moves its atoms.
        """
        mu = self.baseline
        if isinstance(target, GaussianRisk):
            if not isinstance(mu, Gaussian):
                raise ValidationError("a GaussianRisk target needs a Gaussian baseline")
            value = gaussian.max_corr_gaussian(mu.cov, target.covariance)
            if shift is not None:
                value += float(mu.mean() @ np.asarray(shift, float))
            return Evaluation(value, "gaussian")
        if not isinstance(target, EmpiricalDistribution):
            raise ValidationError(f"unsupported target {type(target).__name__}")
        if shift is not None:
            y = np.asarray(shift, float)
            target = target.map_atoms(lambda a: a + y)
        if target.dim != mu.dim:
            raise ValidationError(f"baseline has dimension {mu.dim}, target has {target.dim}")
        if isinstance(mu, BernoulliVector):
            return Evaluation(max_corr_bernoulli(target, mu.alpha), "shortfall")
        if target.n == 1:
            return Evaluation(float(mu.mean() @ target.atoms[0]), "point_mass")
        report = transport.tatonnement(mu, target, self.cfg)
        return Evaluation(report.risk_value, "transport", report.converged, report)

    def __call__(self, target, shift=None) -> float:
        return self.evaluate(target, shift).value

    def point_mass(self, y) -> float:
        """``rho(delta_y) = <mean(mu), y>``."""
        return float(self.baseline.mean() @ np.asarray(y, float))


# ---------------------------------------------------------------------------
# Penalized measures over finite scenario families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioFamily:
    entries: tuple

    def __post_init__(self):
        entries = tuple((mu, float(pen)) for mu, pen in self.entries)
        if not entries:
            raise ValidationError("scenario family is empty")
        for mu, pen in entries:
            if not isinstance(mu, BaselineMeasure):
                raise ValidationError(f"scenario {mu!r} is not a baseline measure")
            if not math.isfinite(pen) or pen < 0:
                raise ValidationError(f"penalties must be finite and >= 0, got {pen!r}")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class ConvexMeasureResult:
    value: float
    argmax: int
    scenario_values: list
    errors: list

    def to_dict(self):
        return {"value": self.value, "argmax": self.argmax,
                "scenario_values": self.scenario_values, "errors": self.errors}


def convex_measure(target, family: ScenarioFamily, cfg: SolveConfig | None = None) -> ConvexMeasureResult:
    """``max_i rho_{mu_i}(target) - penalty_i``, lowest index on ties.

    A scenario that raises is recorded in ``errors`` and skipped; the call
    fails only when every scenario fails.
    """
    cfg = cfg or SolveConfig()
    values, errors = [], []
    for mu, pen in family.entries:
        try:
            values.append(MaxCorrMeasure(mu, cfg)(target))
            errors.append(None)
        except MaxCorrError as exc:
            values.append(None)
            errors.append(str(exc))
    scores = [-np.inf if v is None else v - pen for v, (_, pen) in zip(values, family.entries)]
    if all(v is None for v in values):
        raise MaxCorrError(f"every scenario failed: {errors}")
    best = int(np.argmax(scores))
    return ConvexMeasureResult(float(scores[best]), best, values, errors)


# ---------------------------------------------------------------------------
# Axiom checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    gap: float
    tol: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"check": self.name, "passed": self.passed, "gap": self.gap, "tol": self.tol,
                **self.details}


def _check_tol(tol):
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol!r}")


def _scaled(target, lam):
    if isinstance(target, GaussianRisk):
        return GaussianRisk(lam * lam * target.covariance)
    return target.map_atoms(lambda a: lam * a)


def check_translation_invariance(measure: MaxCorrMeasure, target, y, m: float, tol: float) -> CheckReport:
    """``rho(X + m y) = rho(X) + m rho(delta_y)``."""
    _check_tol(tol)
    y = np.asarray(y, dtype=float)
    base = measure.evaluate(target)
    if m == 0:
        shifted = base
    else:
        shifted = measure.evaluate(target, shift=m * y)
    expected = base.value + m * measure.point_mass(y)
    gap = abs(shifted.value - expected)
    converged = base.converged and shifted.converged
    return CheckReport("translation_invariance", bool(converged and gap <= tol), gap, tol,
                       {"lhs": shifted.value, "rhs": expected, "m": m, "converged": converged})


def check_positive_homogeneity(measure: MaxCorrMeasure, target, lam: float, tol: float) -> CheckReport:
    """``rho(lam X) = lam rho(X)`` for ``lam > 0``."""
    _check_tol(tol)
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam!r}")
    base = measure.evaluate(target)
    scaled = base if lam == 1 else measure.evaluate(_scaled(target, lam))
    gap = abs(scaled.value - lam * base.value)
    converged = base.converged and scaled.converged
    return CheckReport("positive_homogeneity", bool(converged and gap <= tol), gap, tol,
                       {"lhs": scaled.value, "rhs": lam * base.value, "lambda": lam,
                        "converged": converged})


def check_subadditivity(measure: MaxCorrMeasure, x_rows, y_rows, tol: float) -> CheckReport:
    """``rho(X + Y) <= rho(X) + rho(Y)`` for a row-paired joint sample."""
    _check_tol(tol)
    x = np.atleast_2d(np.asarray(x_rows, dtype=float))
    y = np.atleast_2d(np.asarray(y_rows, dtype=float))
    if x.shape != y.shape:
        raise ValidationError(f"paired samples differ in shape: {x.shape} vs {y.shape}")
    rx = measure.evaluate(from_samples(x))
    ry = measure.evaluate(from_samples(y))
    rs = measure.evaluate(from_samples(x + y))
    excess = rs.value - rx.value - ry.value
    converged = rx.converged and ry.converged and rs.converged
    return CheckReport("subadditivity", bool(converged and excess <= tol), excess, tol,
                       {"rho_sum": rs.value, "rho_x": rx.value, "rho_y": ry.value,
                        "converged": converged})


@dataclass(frozen=True)
class Cone:
    """Closed convex cone generated by finitely many vectors."""

    generators: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if g.ndim != 2 or g.shape[0] == 0 or not np.all(np.isfinite(g)):
            raise ValidationError("cone generators must be a non-empty finite (k, d) array")
        if not np.any(np.abs(g) > 0):
            raise ValidationError("cone needs at least one nonzero generator")
        g = g.copy()
        g.flags.writeable = False
        object.__setattr__(self, "generators", g)

    @property
    def dim(self):
        return self.generators.shape[1]


def cone_condition(baseline: BaselineMeasure, cone: Cone) -> bool:
    """Whether ``<g, u> >= 0`` for every generator ``g`` and every ``u`` in the support."""
    if cone.dim != baseline.dim:
        raise ValidationError(f"cone has dimension {cone.dim}, baseline has {baseline.dim}")
    g = cone.generators
    if isinstance(baseline, UniformCube):
        return bool(np.all(g >= 0))
    if isinstance(baseline, Gaussian):
        # full support: only the zero cone is admissible
        return bool(np.all(g == 0))
    if isinstance(baseline, BernoulliVector):
        return bool(np.all(g @ baseline.high_point >= 0))
    if isinstance(baseline, Empirical):
        return bool(np.all(baseline.dist.atoms @ g.T >= 0))
    raise ValidationError(f"unknown support for baseline {baseline!r}")


def _probe_target(baseline, n, rng):
    d = baseline.dim
    if isinstance(baseline, Gaussian):
        return validate_empirical(rng.standard_normal((n, d)))
    return validate_empirical(rng.random((n, d)))


def check_cone_monotonicity(baseline: BaselineMeasure, cone: Cone, tol: float, *,
                            cfg: SolveConfig | None = None, trials: int = 3, atoms: int = 4,
                            seed: int = 0) -> CheckReport:
    """Cone condition for ``baseline`` plus, when it holds, an empirical probe.

    The probe draws random targets ``X`` and per-atom cone elements ``Z`` and
    requires ``rho(X + Z) >= rho(X) - tol``. ``details['condition']`` is the
    analytic verdict; ``passed`` means the probe found no violation.
    """
    _check_tol(tol)
    holds = cone_condition(baseline, cone)
    details = {"condition": holds, "probe_trials": 0}
    worst = 0.0
    if holds and trials > 0:
        measure = MaxCorrMeasure(baseline, cfg or SolveConfig())
        rng = np.random.default_rng(seed)
        converged = True
        for _ in range(trials):
            x = _probe_target(baseline, atoms, rng)
            z = rng.random((atoms, cone.generators.shape[0])) @ cone.generators
            bx = measure.evaluate(x)
            bz = measure.evaluate(from_samples(x.atoms + z, x.weights))
            converged = converged and bx.converged and bz.converged
            worst = max(worst, bx.value - bz.value)
        details.update(probe_trials=trials, converged=converged)
        return CheckReport("cone_monotonicity", bool(converged and worst <= tol), worst, tol, details)
    return CheckReport("cone_monotonicity", True, worst, tol, details)


def check_comonotone_additivity(baseline: BaselineMeasure, p: EmpiricalDistribution,
                                q: EmpiricalDistribution, cfg: SolveConfig | None, tol: float) -> CheckReport:
    """``rho(X + Y) = rho(X) + rho(Y)`` for the pair coupled through one baseline sample.

    ``P`` and ``Q`` are solved on the same seeded sample; pairing each
    sample point's two images gives a comonotonic ``(X, Y)``. The law of
    ``X + Y`` is then solved as a third, independent problem.
    """
    _check_tol(tol)
    if not baseline.is_continuous:
        raise ValidationError("comonotonic constructions need a continuous baseline")
    cfg = cfg or SolveConfig()
    measure = MaxCorrMeasure(baseline, cfg)
    points = sample_baseline(baseline, cfg.sample_count, cfg.seed, workers=cfg.workers)

    def image(target):
        ev = measure.evaluate(target)
        if not ev.converged:
            raise ConvergenceError(f"solver did not converge for a target with {target.n} atoms")
        if ev.report is None:
            return ev.value, np.broadcast_to(target.atoms[0], points.shape)
        return ev.value, transport.generalized_quantile(ev.report, target, points)

    rho_p, xp = image(p)
    rho_q, xq = image(q)
    pair_sum = xp + xq
    sample_level = float(np.einsum("ij,ij->", points, pair_sum) / points.shape[0])
    sum_law = from_samples(pair_sum)
    rho_sum = measure.evaluate(sum_law)
    if not rho_sum.converged:
        raise ConvergenceError("solver did not converge for the comonotonic sum")
    gap = abs(rho_sum.value - rho_p - rho_q)
    return CheckReport("comonotone_additivity", bool(gap <= tol), gap, tol,
                       {"rho_sum": rho_sum.value, "rho_p": rho_p, "rho_q": rho_q,
                        "sample_level_sum": sample_level, "sum_atoms": sum_law.n})
