"""Independent brute-force values of the maximal correlation functional.

These routines share no code with the transport solver. They are used to
check it and to produce reference values in tests:

* in dimension one the optimal coupling is the comonotone (sorted) one, so
  the value is a quantile integral ``int_0^1 phi(t) F^{-1}(t) dt``;
* between two finite distributions the problem is a linear assignment or
  transportation problem with gain ``<u_j, y_k>``.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np
import scipy.sparse as sps
from scipy import integrate, optimize, stats

from .types import (
    BaselineMeasure,
    BernoulliVector,
    Empirical,
    EmpiricalDistribution,
    Gaussian,
    UniformCube,
    ValidationError,
)

EXHAUSTIVE_LIMIT = 9
ASSIGNMENT_LIMIT = 2000
LP_CELL_LIMIT = 250_000
PROBE_EXHAUSTIVE_LIMIT = 7


# ---------------------------------------------------------------------------
# d = 1: quantile integrals
# ---------------------------------------------------------------------------


def _step_quantile_integral(values, probs):
    """Block integral of the quantile function of a discrete law."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, float)[order]
    edges = np.concatenate([[0.0], np.cumsum(np.asarray(probs, float)[order])])
    edges[-1] = 1.0

    def block(a, b):
        lo = np.clip(edges[:-1], a, b)
        hi = np.clip(edges[1:], a, b)
        return float(np.sum(v * (hi - lo)))

    return block


def _block_integral(baseline):
    if isinstance(baseline, BaselineMeasure) and baseline.dim != 1:
        raise ValidationError(f"baseline must be one-dimensional, got dim={baseline.dim}")
    if isinstance(baseline, UniformCube):
        return lambda a, b: (b * b - a * a) / 2
    if isinstance(baseline, Gaussian):
        sigma = math.sqrt(float(baseline.cov[0, 0]))

        def block(a, b):
            # d/dt pdf(ppf(t)) = -ppf(t), so the integral of sigma * ppf is a pdf difference
            za, zb = stats.norm.ppf(a), stats.norm.ppf(b)
            return sigma * (stats.norm.pdf(za) - stats.norm.pdf(zb))

        return block
    if isinstance(baseline, BernoulliVector):
        return _step_quantile_integral([0.0, 1.0 / baseline.alpha], [1 - baseline.alpha, baseline.alpha])
    if isinstance(baseline, Empirical):
        return _step_quantile_integral(baseline.dist.atoms[:, 0], baseline.dist.weights)
    if callable(baseline):
        return lambda a, b: integrate.quad(baseline, a, b, limit=64)[0]
    raise ValidationError(f"unsupported baseline {baseline!r}")


def max_corr_1d_quantile(baseline_quantile, target: EmpiricalDistribution) -> float:
    """Maximal correlation in dimension one as a sum of quantile blocks.

    ``baseline_quantile`` is either a one-dimensional built-in baseline or a
    nondecreasing callable on (0, 1) giving the baseline quantile function.
    Atoms are paired comonotonically with the baseline: the k-th smallest
    atom receives the integral of the baseline quantile over its block of
    cumulative probability.
    """
    if target.dim != 1:
        raise ValidationError(f"target must be one-dimensional, got dim={target.dim}")
    block = _block_integral(baseline_quantile)
    order = np.argsort(target.atoms[:, 0], kind="stable")
    y = target.atoms[order, 0]
    c = np.concatenate([[0.0], np.cumsum(target.weights[order])])
    c[-1] = 1.0
    return float(sum(y[k] * block(c[k], c[k + 1]) for k in range(target.n)))


# ---------------------------------------------------------------------------
# Discrete-discrete problems
# ---------------------------------------------------------------------------


def _as_points(x):
    if isinstance(x, EmpiricalDistribution):
        return np.array(x.atoms), np.array(x.weights)
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])


def _perm_value(gain, perm) -> float:
    n = gain.shape[0]
    return float(np.sum(gain[np.arange(n), perm]) / n)


def best_permutation_exhaustive(gain) -> np.ndarray:
    """Permutation maximizing ``sum_j gain[j, perm[j]]``; lexicographically first on ties."""
    n = gain.shape[0]
    if n > EXHAUSTIVE_LIMIT:
        raise ValidationError(f"exhaustive search limited to n <= {EXHAUSTIVE_LIMIT}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)
    totals = gain[np.arange(n), perms].sum(axis=1)
    return perms[int(np.argmax(totals))]


def best_permutation_assignment(gain) -> np.ndarray:
    n = gain.shape[0]
    if n > ASSIGNMENT_LIMIT:
        raise ValidationError(f"assignment limited to n <= {ASSIGNMENT_LIMIT}, got {n}")
    rows, cols = optimize.linear_sum_assignment(gain, maximize=True)
    perm = np.empty(n, dtype=np.intp)
    perm[rows] = cols
    return perm


def _repair_on_forest(rows, cols, flows, a, b):
    """Recompute flows on a forest support so both marginals hold exactly.

    Returns ``None`` when the support has a cycle.
    """
    edges_of = defaultdict(set)
    for e, (i, j) in enumerate(zip(rows, cols)):
        edges_of[("r", i)].add(e)
        edges_of[("c", j)].add(e)
    remaining = {("r", i): a[i] for i in set(rows)}
    remaining.update({("c", j): b[j] for j in set(cols)})
    out = np.array(flows, dtype=float)
    leaves = [v for v, es in edges_of.items() if len(es) == 1]
    done = 0
    while leaves:
        v = leaves.pop()
        if len(edges_of[v]) != 1:
            continue
        e = edges_of[v].pop()
        other = ("c", cols[e]) if v[0] == "r" else ("r", rows[e])
        out[e] = remaining[v]
        remaining[other] -= out[e]
        edges_of[other].discard(e)
        done += 1
        if len(edges_of[other]) == 1:
            leaves.append(other)
    if done != len(out) or np.any(out < -1e-15):
        return None
    return np.maximum(out, 0.0)


def _transport_lp(gain, a, b):
    n, m = gain.shape
    if n * m > LP_CELL_LIMIT:
        raise ValidationError(f"transport LP limited to {LP_CELL_LIMIT} cells, got {n * m}")
    row_sum = sps.kron(sps.eye(n), np.ones((1, m)))
    col_sum = sps.kron(np.ones((1, n)), sps.eye(m))
    a_eq = sps.vstack([row_sum, sps.csr_matrix(col_sum)[:-1]]).tocsr()
    b_eq = np.concatenate([a, b[:-1]])
    res = optimize.linprog(-gain.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise ValidationError(f"transport LP failed: {res.message}")
    x = res.x
    support = np.flatnonzero(x > 1e-13)
    rows, cols = np.divmod(support, m)
    flows = _repair_on_forest(rows, cols, x[support], a, b)
    if flows is None:
        flows = x[support]
    return rows, cols, flows


def max_corr_assignment(source, target, method: str = "auto"):
    """Maximal correlation ``max E[<U, X>]`` between two finite distributions.

    ``source`` and ``target`` are :class:`EmpiricalDistribution` objects or
    arrays of equally weighted rows. Returns ``(value, coupling)`` with
    ``coupling`` a sparse ``(n_source, n_target)`` matrix of masses.

    ``method`` is ``"exhaustive"`` (all permutations, n <= 9),
    ``"assignment"`` (Hungarian-type solver), ``"lp"`` (transportation
    linear program) or ``"auto"``, which uses the first applicable one for
    equal uniform weights and the LP otherwise.
    """
    u, a = _as_points(source)
    y, b = _as_points(target)
    if u.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: source {u.shape[1]}, target {y.shape[1]}")
    gain = u @ y.T
    n, m = gain.shape
    square_uniform = n == m and np.all(a == a[0]) and np.all(b == b[0])
    if method == "auto":
        method = ("exhaustive" if n <= EXHAUSTIVE_LIMIT else "assignment") if square_uniform else "lp"
    if method in ("exhaustive", "assignment"):
        if not square_uniform:
            raise ValidationError(f"method {method!r} needs equal sizes and uniform weights")
        finder = best_permutation_exhaustive if method == "exhaustive" else best_permutation_assignment
        perm = finder(gain)
        coupling = sps.coo_matrix((np.full(n, 1.0 / n), (np.arange(n), perm)), shape=(n, m))
        return _perm_value(gain, perm), coupling
    if method != "lp":
        raise ValidationError(f"unknown method {method!r}")
    rows, cols, flows = _transport_lp(gain, a, b)
    value = float(np.sum(flows * gain[rows, cols]))
    return value, sps.coo_matrix((flows, (rows, cols)), shape=(n, m))


def _equal_weight_value(gain) -> float:
    return _perm_value(gain, best_permutation_assignment(gain))


def structure_neutrality_probe(source, target_a, target_b, trials: int | None = None, seed: int = 0):
    """Largest ``rho(A~ + B~)`` over rearrangements, against ``rho(A) + rho(B)``.

    All three inputs are equally weighted samples of the same size ``n``
    (repeated rows allowed), and ``rho`` is maximal correlation against the
    uniform law on ``source``. A joint arrangement pairs row ``j`` of A with
    row ``tau(j)`` of B; only this relative permutation changes the law of
    the sum, so all ``n!`` of them are enumerated (or ``trials`` random ones).

    Returns ``(best_found, certificate)``.
    """
    s, _ = _as_points(source)
    xa, _ = _as_points(target_a)
    xb, _ = _as_points(target_b)
    n = s.shape[0]
    if not (xa.shape[0] == xb.shape[0] == n):
        raise ValidationError("source and both targets need the same number of rows")
    if not (s.shape[1] == xa.shape[1] == xb.shape[1]):
        raise ValidationError("dimension mismatch")
    if n > EXHAUSTIVE_LIMIT:
        raise ValidationError(f"probe limited to n <= {EXHAUSTIVE_LIMIT}")
    if trials is None:
        if n > PROBE_EXHAUSTIVE_LIMIT:
            raise ValidationError(
                f"exhaustive probe limited to n <= {PROBE_EXHAUSTIVE_LIMIT}; pass trials to sample"
            )
        candidates = itertools.permutations(range(n))
    else:
        rng = np.random.default_rng(seed)
        candidates = (rng.permutation(n) for _ in range(int(trials)))

    rho_a = _equal_weight_value(s @ xa.T)
    rho_b = _equal_weight_value(s @ xb.T)
    best, best_tau, evaluated = -np.inf, None, 0
    for tau in candidates:
        tau = np.asarray(tau, dtype=np.intp)
        value = _equal_weight_value(s @ (xa + xb[tau]).T)
        evaluated += 1
        if value > best:
            best, best_tau = value, tau
    bound = rho_a + rho_b
    certificate = {
        "perm_a": list(range(n)),
        "perm_b": best_tau.tolist(),
        "rho_a": rho_a,
        "rho_b": rho_b,
        "bound": bound,
        "excess": best - bound,
        "evaluated": evaluated,
    }
    return float(best), certificate
