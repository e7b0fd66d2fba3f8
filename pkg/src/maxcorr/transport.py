"""Semi-discrete transport from a baseline measure to a discrete target.

The target is ``P_n = sum_k pi_k delta(Y_k)``. For prices ``w`` the dual
potential is ``w*(u) = max_k <u, Y_k> - w_k`` and cell ``k`` is the set of
``u`` where atom ``k`` attains that maximum (lowest index on ties). All
integrals against the baseline are Monte Carlo averages over one seeded
sample, so for a fixed sample the objective

    Phi(w) = mean_j w*(u_j) + sum_k pi_k w_k

is an exactly convex, piecewise-affine function with gradient ``pi - p``.
The solver lowers the price of under-demanded atoms and raises the price of
over-demanded ones until every cell carries its target mass.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from . import gaussian
from .types import (
    CHUNK_SIZE,
    BaselineMeasure,
    BernoulliVector,
    CellStats,
    DualWeights,
    EmpiricalDistribution,
    ValidationError,
    canonicalize,
    sample_baseline,
)

log = logging.getLogger(__name__)

MIN_SAMPLE_COUNT = 1000
DENSE_ATOM_LIMIT = 48
EMPTY_CELL_WARN_FRACTION = 0.25


# ---------------------------------------------------------------------------
# Configuration and report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedStep:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValidationError("step size must be positive")


@dataclass(frozen=True)
class DecayStep:
    """Step ``eps0 / (m + 1) ** exponent`` at iteration ``m``."""

    eps0: float
    exponent: float = 0.5

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValidationError("step size must be positive")
        if not 0 < self.exponent <= 1:
            raise ValidationError("decay exponent must lie in (0, 1]")


@dataclass(frozen=True)
class BacktrackingStep:
    """Gradient step that is shrunk until the objective does not increase.

    ``eps0=None`` means ``1 / (2 n)``.
    """

    eps0: float | None = None
    shrink: float = 0.5
    grow: float = 1.1
    max_halvings: int = 60

    def __post_init__(self):
        if self.eps0 is not None and not self.eps0 > 0:
            raise ValidationError("step size must be positive")
        if not 0 < self.shrink < 1 or not self.grow >= 1:
            raise ValidationError("need 0 < shrink < 1 <= grow")


@dataclass(frozen=True)
class NewtonStep:
    """Damped Newton price update.

    The Hessian of the objective is the weighted adjacency Laplacian of the
    cells: the mass flowing between neighbouring cells per unit of price
    difference. It is estimated from sample points whose best and second best
    scores differ by less than a bandwidth ``h``; ``band`` is the fraction of
    points used to set ``h`` (``None`` picks about 20 points per cell).
    """

    band: float | None = None
    max_halvings: int = 30

    def __post_init__(self):
        if self.band is not None and not 0 < self.band < 1:
            raise ValidationError("band must lie in (0, 1)")


STEP_RULES = {
    "fixed": FixedStep,
    "decay": DecayStep,
    "backtracking": BacktrackingStep,
    "newton": NewtonStep,
}


def _rule_name(rule) -> str:
    for name, cls in STEP_RULES.items():
        if isinstance(rule, cls):
            return name
    raise ValidationError(f"unknown step rule {rule!r}")


@dataclass(frozen=True)
class SolveConfig:
    sample_count: int = 100_000
    seed: int = 0
    max_iters: int = 200
    step_rule: FixedStep | DecayStep | BacktrackingStep | NewtonStep = field(default_factory=NewtonStep)
    tol_residual: float = 1e-3
    resample_each_iter: bool = False
    init: str = "moment"
    workers: int = 1

    def __post_init__(self):
        if int(self.sample_count) != self.sample_count or self.sample_count < MIN_SAMPLE_COUNT:
            raise ValidationError(
                f"sample_count must be an integer >= {MIN_SAMPLE_COUNT}, got {self.sample_count!r}"
            )
        if not self.tol_residual > 0:
            raise ValidationError("tol_residual must be positive")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be non-negative")
        if self.init not in ("moment", "zero"):
            raise ValidationError(f"init must be 'moment' or 'zero', got {self.init!r}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        _rule_name(self.step_rule)
        if self.resample_each_iter and isinstance(self.step_rule, (BacktrackingStep, NewtonStep)):
            raise ValidationError("resampling every iteration needs a fixed or decay step rule")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_rule"] = {"kind": _rule_name(self.step_rule), **asdict(self.step_rule)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolveConfig":
        d = dict(d)
        rule = d.pop("step_rule", None)
        if isinstance(rule, dict):
            rule = dict(rule)
            kind = rule.pop("kind", "newton")
            if kind not in STEP_RULES:
                raise ValidationError(f"unknown step rule {kind!r}")
            d["step_rule"] = STEP_RULES[kind](**rule)
        elif rule is not None:
            d["step_rule"] = rule
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class SolveReport:
    weights: DualWeights
    risk_value: float
    dual_value: float
    residual: float
    objective_trace: list
    residual_trace: list
    cell_stats: CellStats
    iterations: int
    converged: bool
    step_rule: str
    warnings: list = field(default_factory=list)

    @property
    def duality_gap(self) -> float:
        return abs(self.dual_value - self.risk_value)

    def to_dict(self) -> dict:
        cs = self.cell_stats
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "risk_value": self.risk_value,
            "dual_value": self.dual_value,
            "duality_gap": self.duality_gap,
            "residual": self.residual,
            "step_rule": self.step_rule,
            "weights": self.weights.values.tolist(),
            "cell_masses": cs.masses.tolist(),
            "cell_barycenters": [None if np.isnan(b).any() else b.tolist() for b in cs.barycenters],
            "objective_trace": list(self.objective_trace),
            "residual_trace": list(self.residual_trace),
            "sample_count": cs.sample_count,
            "seed": cs.seed,
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# Assignment of sample points to cells
# ---------------------------------------------------------------------------


def potential_eval(w, target: EmpiricalDistribution, u) -> tuple[float, int]:
    """Value of ``max_k <u, Y_k> - w_k`` and the lowest index attaining it."""
    w = _weights_array(w, target)
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] != target.dim:
        raise ValidationError(f"point has dimension {u.shape[0]}, atoms have {target.dim}")
    scores = target.atoms @ u - w
    k = int(np.argmax(scores))
    return float(scores[k]), k


def _weights_array(w, target) -> np.ndarray:
    values = w.values if isinstance(w, DualWeights) else np.asarray(w, dtype=float).ravel()
    if values.shape[0] != target.n:
        raise ValidationError(f"{values.shape[0]} weights for {target.n} atoms")
    return values


@dataclass
class _Assignment:
    value: np.ndarray   # w*(u_j)
    best: np.ndarray    # cell index of u_j
    second: np.ndarray | None
    gap: np.ndarray | None  # best score minus second best score


def _dense_chunk(u, atoms, w, need_second):
    s = u @ atoms.T - w
    rows = np.arange(s.shape[0])
    best = s.argmax(axis=1)
    value = s[rows, best]
    if not need_second or atoms.shape[0] == 1:
        return value, best, None, None
    s[rows, best] = -np.inf
    second = s.argmax(axis=1)
    return value, best, second, value - s[rows, second]


class _LiftedTree:
    """Exact nearest-score search for many atoms.

    ``<u, Y_k> - w_k`` is rewritten as a power distance between a transformed
    query and transformed sites, and the power distance as a Euclidean one
    in one extra dimension. The transform comes from a quadratic fit of the
    weights, which keeps the extra coordinate small so the tree stays
    efficient. Candidates are re-scored exactly.
    """

    def __init__(self, atoms, w, scale_ratio):
        n, d = atoms.shape
        quad = 0.5 * np.einsum("ni,nj->nij", atoms, atoms).reshape(n, d * d)
        design = np.column_stack([quad, atoms, np.ones(n)])
        coef = np.linalg.lstsq(design, w, rcond=None)[0]
        q = coef[: d * d].reshape(d, d)
        q = (q + q.T) / 2
        vals, vecs = np.linalg.eigh(q)
        vals = np.maximum(vals, 1e-2 * scale_ratio)
        root = (vecs * np.sqrt(vals)) @ vecs.T
        self.inv_root = (vecs / np.sqrt(vals)) @ vecs.T
        self.shift = coef[d * d: d * d + d]
        sites = atoms @ root
        lift = 2 * (w - atoms @ self.shift) - np.einsum("ij,ij->i", sites, sites)
        lift = np.sqrt(lift - lift.min())
        self.tree = cKDTree(np.column_stack([sites, lift]))
        self.k = min(n, 3)

    def candidates(self, u):
        q = (u - self.shift) @ self.inv_root
        _, idx = self.tree.query(np.column_stack([q, np.zeros(len(q))]), k=self.k)
        return idx


def _tree_chunk(u, atoms, w, tree, need_second):
    idx = tree.candidates(u)
    sc = np.einsum("nd,nkd->nk", u, atoms[idx]) - w[idx]
    order = np.lexsort((idx, -sc), axis=-1)
    rows = np.arange(u.shape[0])[:, None]
    sc = sc[rows, order]
    idx = idx[rows, order]
    if not need_second:
        return sc[:, 0], idx[:, 0], None, None
    return sc[:, 0], idx[:, 0], idx[:, 1], sc[:, 0] - sc[:, 1]


def assign_cells(points, target: EmpiricalDistribution, w, *, need_second=False, workers=1) -> _Assignment:
    """Cell index and potential value for every row of ``points``.

    Work is split into fixed chunks and concatenated in order, so the result
    does not depend on ``workers``.
    """
    atoms = target.atoms
    w = _weights_array(w, target)
    n = atoms.shape[0]
    if points.shape[1] != target.dim:
        raise ValidationError(f"points have dimension {points.shape[1]}, atoms have {target.dim}")
    tree = None
    if n > DENSE_ATOM_LIMIT:
        spread_u = points.var(axis=0).sum()
        spread_y = max(atoms.var(axis=0).sum(), 1e-300)
        tree = _LiftedTree(atoms, w, math.sqrt(max(spread_u, 1e-300) / spread_y))

    def run(start):
        u = points[start: start + CHUNK_SIZE]
        if tree is None:
            return _dense_chunk(u, atoms, w, need_second)
        return _tree_chunk(u, atoms, w, tree, need_second)

    starts = range(0, points.shape[0], CHUNK_SIZE)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    value = np.concatenate([p[0] for p in parts])
    best = np.concatenate([p[1] for p in parts])
    if parts[0][2] is None:
        return _Assignment(value, best, None, None)
    return _Assignment(value, best, np.concatenate([p[2] for p in parts]),
                       np.concatenate([p[3] for p in parts]))


# ---------------------------------------------------------------------------
# Cell statistics and objective
# ---------------------------------------------------------------------------


def _check_problem(baseline: BaselineMeasure, target: EmpiricalDistribution):
    if isinstance(baseline, BernoulliVector):
        raise ValidationError(
            "the Bernoulli baseline is a two-point law; use risk.expected_shortfall_mv "
            "or risk.max_corr_bernoulli instead of the transport solver"
        )
    if baseline.dim != target.dim:
        raise ValidationError(f"baseline has dimension {baseline.dim}, target has {target.dim}")


def _stats_from_assignment(points, target, w, a: _Assignment, sample_count, seed) -> CellStats:
    n = target.n
    counts = np.bincount(a.best, minlength=n)
    masses = counts / points.shape[0]
    sums = np.zeros((n, target.dim))
    np.add.at(sums, a.best, points)
    with np.errstate(invalid="ignore", divide="ignore"):
        bary = sums / counts[:, None]
    bary[counts == 0] = np.nan
    objective = float(a.value.mean() + target.weights @ w)
    return CellStats(masses, bary, objective, sample_count, seed)


def cell_stats(baseline, target, w, cfg: SolveConfig) -> CellStats:
    """Masses, barycenters and objective of the cells for prices ``w``."""
    _check_problem(baseline, target)
    w = _weights_array(w, target)
    points = sample_baseline(baseline, cfg.sample_count, cfg.seed, workers=cfg.workers)
    a = assign_cells(points, target, w, workers=cfg.workers)
    return _stats_from_assignment(points, target, w, a, cfg.sample_count, cfg.seed)


def objective(baseline, target, w, cfg: SolveConfig) -> float:
    """Fixed-sample value of ``mean_j w*(u_j) + sum_k pi_k w_k``."""
    return cell_stats(baseline, target, w, cfg).objective


# ---------------------------------------------------------------------------
# Initial prices
# ---------------------------------------------------------------------------


def moment_matched_weights(points, target: EmpiricalDistribution) -> np.ndarray:
    """Prices whose cells are those of the Gaussian transport between moment-matched laws.

    The affine map ``T(y) = mean_u + M (y - mean_y)``, with ``M`` the Gaussian
    transport matrix from cov(target) to cov(sample), places every atom in
    the bulk of the sample. Prices ``w_k = T_k' M^{-1} T_k / 2`` make cell k
    the set of points closest to ``T_k`` in the ``M^{-1}`` metric. For
    Gaussian-like targets these prices are already close to optimal.
    """
    if target.n == 1:
        return np.zeros(1)
    d = target.dim
    mean_u = points.mean(axis=0)
    cov_u = np.atleast_2d(np.cov(points, rowvar=False))
    cov_y = target.covariance()
    scale = np.trace(cov_y) / d
    cov_u = cov_u + 1e-12 * np.trace(cov_u) / d * np.eye(d)
    cov_y = cov_y + 1e-9 * scale * np.eye(d)
    m = gaussian.brenier_map_gaussian(cov_y, cov_u)
    t = mean_u + (target.atoms - target.mean()) @ m
    w = 0.5 * np.einsum("ni,ij,nj->n", t, np.linalg.inv(m), t)
    return canonicalize(w)


def open_empty_cells(points, target, w, *, rounds=10, workers=1) -> np.ndarray:
    """Lower the price of each empty cell just enough to win its best sample point."""
    w = np.array(w, dtype=float)
    for _ in range(rounds):
        a = assign_cells(points, target, w, workers=workers)
        empty = np.flatnonzero(np.bincount(a.best, minlength=target.n) == 0)
        if empty.size == 0:
            break
        for k in empty:
            own = points @ target.atoms[k] - w[k]
            w[k] -= np.min(a.value - own) + 1e-12 * (1.0 + abs(w[k]))
    return canonicalize(w)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def _newton_direction(a: _Assignment, grad, n, n_points, band):
    if band is None:
        band = float(np.clip(20.0 * n / n_points, 0.05, 0.5))
    gap = a.gap
    h = np.quantile(gap, band)
    if not h > 0:
        positive = gap[gap > 0]
        if positive.size == 0:
            return None
        h = np.quantile(positive, band)
    near = gap < h
    flow = sps.coo_matrix(
        (np.full(int(near.sum()), 1.0 / (n_points * h)), (a.best[near], a.second[near])),
        shape=(n, n),
    ).tocsr()
    # each side of a boundary estimates the same flow; average the two one-sided counts
    flow = (flow + flow.T) / 2
    degree = np.asarray(flow.sum(axis=1)).ravel()
    if not np.any(degree > 0):
        return None
    floor = 0.1 * np.median(degree[degree > 0])
    # the estimated graph can split; only the largest piece keeps its own gauge,
    # the others are tied to it through the diagonal floor
    _, label = csgraph.connected_components(flow, directed=False)
    main = label == np.argmax(np.bincount(label))
    extra = np.where(main, np.maximum(floor - degree, 0.0), floor)
    rhs = np.array(grad, dtype=float)
    rhs[main] -= rhs[main].mean()
    hess = sps.diags(degree + extra + 1e-6 * floor) - flow
    return spla.spsolve(hess.tocsc(), rhs)


class _State:
    def __init__(self, points, target, w, workers, need_second):
        self.w = w
        self.a = assign_cells(points, target, w, need_second=need_second, workers=workers)
        self.counts = np.bincount(self.a.best, minlength=target.n)
        self.p = self.counts / points.shape[0]
        self.objective = float(self.a.value.mean() + target.weights @ w)
        self.residual = float(np.max(np.abs(target.weights - self.p)))

    @property
    def n_empty(self):
        return int(np.count_nonzero(self.counts == 0))


def tatonnement(baseline, target: EmpiricalDistribution, cfg: SolveConfig | None = None, *,
                initial_weights=None) -> SolveReport:
    """Adjust prices until the cell masses match the target weights.

    Each iteration moves prices against excess supply, ``w <- w - step``,
    where the step is ``eps * (pi - p)`` for the gradient rules and the
    damped Newton step for :class:`NewtonStep`. Stops when
    ``max_k |pi_k - p_k| <= cfg.tol_residual`` or after ``cfg.max_iters``;
    non-convergence is reported, not raised.
    """
    cfg = cfg or SolveConfig()
    _check_problem(baseline, target)
    rule = cfg.step_rule
    rule_name = _rule_name(rule)
    n, pi = target.n, target.weights
    newton = isinstance(rule, NewtonStep)
    points = sample_baseline(baseline, cfg.sample_count, cfg.seed, workers=cfg.workers)

    if initial_weights is not None:
        w = canonicalize(_weights_array(initial_weights, target))
    elif cfg.init == "moment":
        w = moment_matched_weights(points, target)
    else:
        w = np.zeros(n)
    if newton:
        w = open_empty_cells(points, target, w, workers=cfg.workers)

    state = _State(points, target, w, cfg.workers, newton)
    objective_trace = [state.objective]
    residual_trace = [state.residual]
    warnings = []
    eps = (rule.eps0 if rule.eps0 is not None else 1.0 / (2 * n)) if isinstance(rule, BacktrackingStep) else None
    iterations_with_empty = 0
    converged = n == 1 or state.residual <= cfg.tol_residual
    m = 0
    while not converged and m < cfg.max_iters:
        grad = pi - state.p
        new_state = None
        if newton:
            direction = _newton_direction(state.a, grad, n, points.shape[0], rule.band)
            if direction is not None:
                step = 1.0
                for _ in range(rule.max_halvings + 1):
                    trial = _State(points, target, canonicalize(state.w - step * direction), cfg.workers, True)
                    if trial.objective <= state.objective and trial.n_empty <= state.n_empty:
                        new_state = trial
                        break
                    step *= 0.5
            if new_state is None:
                warnings.append(f"line search stalled at iteration {m}")
                break
        elif isinstance(rule, BacktrackingStep):
            for _ in range(rule.max_halvings + 1):
                trial = _State(points, target, canonicalize(state.w - eps * grad), cfg.workers, False)
                if trial.objective <= state.objective:
                    new_state = trial
                    eps *= rule.grow
                    break
                eps *= rule.shrink
            if new_state is None:
                warnings.append(f"line search stalled at iteration {m}")
                break
        else:
            step = rule.eps if isinstance(rule, FixedStep) else rule.eps0 / (m + 1) ** rule.exponent
            if cfg.resample_each_iter:
                points = sample_baseline(baseline, cfg.sample_count, cfg.seed, stream=m + 1,
                                         workers=cfg.workers)
            new_state = _State(points, target, canonicalize(state.w - step * grad), cfg.workers, False)

        state = new_state
        m += 1
        if state.n_empty:
            iterations_with_empty += 1
        objective_trace.append(state.objective)
        residual_trace.append(state.residual)
        log.debug("iter %d objective %.10g residual %.3e empty %d", m, state.objective,
                  state.residual, state.n_empty)
        converged = state.residual <= cfg.tol_residual

    if m and iterations_with_empty > EMPTY_CELL_WARN_FRACTION * m:
        warnings.append(f"empty cells persisted in {iterations_with_empty} of {m} iterations")
    if not converged and m >= cfg.max_iters:
        warnings.append(f"no convergence within {cfg.max_iters} iterations")

    stats = _stats_from_assignment(points, target, state.w, state.a, cfg.sample_count, cfg.seed)
    risk = float(np.einsum("ij,ij->", points, target.atoms[state.a.best]) / points.shape[0])
    return SolveReport(
        weights=DualWeights(state.w),
        risk_value=risk,
        dual_value=stats.objective,
        residual=state.residual,
        objective_trace=objective_trace,
        residual_trace=residual_trace,
        cell_stats=stats,
        iterations=m,
        converged=bool(converged),
        step_rule=rule_name,
        warnings=warnings,
    )


def max_corr_semidiscrete(baseline, target, cfg: SolveConfig | None = None, **kwargs):
    """Maximal correlation of ``target`` against ``baseline`` and the full report.

    The returned value is the primal correlation ``mean_j <u_j, phi(u_j)>``
    at the final prices; ``report.dual_value`` is the dual objective and
    ``report.duality_gap`` their difference.
    """
    report = tatonnement(baseline, target, cfg, **kwargs)
    return report.risk_value, report


def generalized_quantile(report: SolveReport, target: EmpiricalDistribution, points) -> np.ndarray:
    """Image of each point under the transport map of a solved problem."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != target.dim:
        raise ValidationError(f"points have dimension {pts.shape[1]}, atoms have {target.dim}")
    a = assign_cells(pts, target, report.weights)
    return target.atoms[a.best]


def partition_table(report: SolveReport, target, points) -> np.ndarray:
    """Rows ``(u_1..u_d, cell index, potential value)`` for plotting the partition."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = assign_cells(pts, target, report.weights)
    return np.column_stack([pts, a.best, a.value])


def assignment_frequencies(report, baseline, target, count=100_000, seed=1) -> np.ndarray:
    """Cell frequencies of a fresh baseline sample under the solved prices."""
    pts = sample_baseline(baseline, count, seed, stream=7)
    a = assign_cells(pts, target, report.weights)
    return np.bincount(a.best, minlength=target.n) / count
