"""Domain types, validation and deterministic sampling of baseline measures.

Every random draw in the package goes through :func:`sample_baseline`. The
stream is cut into fixed chunks of :data:`CHUNK_SIZE` points and chunk ``c``
of stream ``s`` is generated by a Philox generator keyed by ``(seed, s, c)``,
so a sample never depends on how the chunks are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

CHUNK_SIZE = 8192
WEIGHT_SUM_TOL = 1e-9
SYMMETRY_TOL = 1e-12

_SEED_MASK = (1 << 64) - 1


class MaxCorrError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(MaxCorrError, ValueError):
    """Malformed input: bad shapes, weights, duplicate atoms, bad config."""


class NumericalError(MaxCorrError, ArithmeticError):
    """Input is well formed but numerically unusable, e.g. a singular matrix."""


class ConvergenceError(MaxCorrError, RuntimeError):
    """A solver run that a caller required to converge did not."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Empirical distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Discrete law ``sum_k weights[k] * delta(atoms[k])`` on R^d.

    Atoms are stored in lexicographic order, so two inputs that differ only
    by row order give identical objects (and identical downstream results).
    Use :func:`validate_empirical` or :func:`from_samples` to build one from
    raw data.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise ValidationError(f"atoms must be a non-empty (n, d) array, got shape {atoms.shape}")
        weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.shape[0] != atoms.shape[0]:
            raise ValidationError(
                f"{atoms.shape[0]} atoms but {weights.shape[0]} weights"
            )
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("atom coordinates must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValidationError("weights must be finite and strictly positive")
        # sort before summing so that the normalized weights do not depend on row order
        order = np.lexsort(atoms.T[::-1])
        atoms = atoms[order]
        weights = weights[order]
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"weights sum to {total!r}, expected 1 within {WEIGHT_SUM_TOL}")
        weights = weights / total
        if atoms.shape[0] > 1:
            same = np.all(atoms[1:] == atoms[:-1], axis=1)
            if same.any():
                k = int(np.flatnonzero(same)[0])
                raise ValidationError(f"duplicate atom {atoms[k].tolist()}")

        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def covariance(self) -> np.ndarray:
        c = self.atoms - self.mean()
        return (c * self.weights[:, None]).T @ c

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def map_atoms(self, fn) -> "EmpiricalDistribution":
        """Apply ``fn`` to the (n, d) atom array, keeping the weights."""
        return from_samples(fn(np.array(self.atoms)), self.weights)

    def __repr__(self):
        return f"EmpiricalDistribution(n={self.n}, dim={self.dim})"


def validate_empirical(atoms, weights=None) -> EmpiricalDistribution:
    """Validate raw atoms/weights and return an :class:`EmpiricalDistribution`.

    ``weights=None`` means equal weights. A weight vector whose sum is off by
    less than ``WEIGHT_SUM_TOL`` is renormalized; anything beyond that is an
    error, as are duplicate atoms, non-positive weights, ragged rows and
    non-finite coordinates.
    """
    try:
        arr = np.array(atoms, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"atoms are not a rectangular numeric array: {exc}") from None
    if arr.ndim == 1:
        arr = arr[:, None]
    if weights is None:
        weights = np.full(arr.shape[0], 1.0 / max(arr.shape[0], 1))
    return EmpiricalDistribution(arr, np.asarray(weights, dtype=float))


def from_samples(points, weights=None) -> EmpiricalDistribution:
    """Empirical law of (possibly repeated) sample rows; duplicates are merged."""
    pts = np.array(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if weights is None:
        weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (pts.shape[0],):
        raise ValidationError(f"{pts.shape[0]} sample rows but weights of shape {weights.shape}")
    # canonical row order keeps the merged sums independent of input order
    order = np.lexsort((weights, *pts.T[::-1]))
    pts, weights = pts[order], weights[order]
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=weights, minlength=uniq.shape[0])
    return EmpiricalDistribution(uniq, merged / merged.sum())


# ---------------------------------------------------------------------------
# Baseline measures
# ---------------------------------------------------------------------------


def check_symmetric(m, name="matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL:
        raise ValidationError(f"{name} is not symmetric within {SYMMETRY_TOL}")
    return (m + m.T) / 2


def check_positive_definite(m, name="matrix") -> np.ndarray:
    m = check_symmetric(m, name)
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise ValidationError(f"{name} is not positive definite")
    return m


class BaselineMeasure:
    """Scenario distribution against which correlation is maximized."""

    dim: int
    is_continuous: bool = True

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def _draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformCube(BaselineMeasure):
    """Lebesgue measure on [0, 1]^dim."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValidationError(f"dim must be a positive integer, got {self.dim!r}")

    def mean(self):
        return np.full(self.dim, 0.5)

    def _draw(self, rng, count):
        return rng.random((count, self.dim))


@dataclass(frozen=True, eq=False)
class Gaussian(BaselineMeasure):
    """Centered normal law N(0, cov)."""

    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = check_positive_definite(self.cov, "Gaussian covariance")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("Gaussian covariance is not positive definite") from None
        object.__setattr__(self, "cov", _frozen(cov))
        object.__setattr__(self, "_chol", _frozen(chol))

    @classmethod
    def standard(cls, dim: int) -> "Gaussian":
        return cls(np.eye(dim))

    @property
    def dim(self):
        return self.cov.shape[0]

    def mean(self):
        return np.zeros(self.dim)

    def _draw(self, rng, count):
        return rng.standard_normal((count, self.dim)) @ self._chol.T


@dataclass(frozen=True)
class BernoulliVector(BaselineMeasure):
    """Mass ``alpha`` at (1/alpha, ..., 1/alpha), mass ``1 - alpha`` at 0."""

    dim: int
    alpha: float
    is_continuous = False

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValidationError(f"dim must be a positive integer, got {self.dim!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def high_point(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / self.alpha)

    def mean(self):
        return np.ones(self.dim)

    def _draw(self, rng, count):
        hit = rng.random(count) < self.alpha
        return hit[:, None] * self.high_point


@dataclass(frozen=True, eq=False)
class Empirical(BaselineMeasure):
    """A discrete baseline given by an :class:`EmpiricalDistribution`."""

    dist: EmpiricalDistribution
    is_continuous = False

    @property
    def dim(self):
        return self.dist.dim

    def mean(self):
        return self.dist.mean()

    def _draw(self, rng, count):
        cdf = np.cumsum(self.dist.weights)
        idx = np.searchsorted(cdf, rng.random(count), side="right")
        return self.dist.atoms[np.minimum(idx, self.dist.n - 1)]


def _chunk_generator(seed: int, stream: int, chunk: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & _SEED_MASK, int(stream), int(chunk)])
    return np.random.Generator(np.random.Philox(key))


def sample_baseline(measure: BaselineMeasure, count: int, seed: int, *, stream: int = 0,
                    workers: int = 1) -> np.ndarray:
    """Draw ``count`` points from ``measure`` as a ``(count, dim)`` array.

    The result is a pure function of ``(measure, count, seed, stream)``;
    ``workers`` only changes how the fixed chunks are scheduled.
    """
    if int(count) != count or count < 1:
        raise ValidationError(f"count must be a positive integer, got {count!r}")
    count = int(count)
    starts = range(0, count, CHUNK_SIZE)

    def draw(start):
        rng = _chunk_generator(seed, stream, start // CHUNK_SIZE)
        return measure._draw(rng, min(CHUNK_SIZE, count - start))

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(draw, starts))
    else:
        parts = [draw(s) for s in starts]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Dual weights, cell statistics, Gaussian risks
# ---------------------------------------------------------------------------


def canonicalize(values) -> np.ndarray:
    """Shift a weight vector so that its minimum is 0."""
    v = np.asarray(values, dtype=float)
    return v - v.min()


@dataclass(frozen=True, eq=False)
class DualWeights:
    """Prices w_k of the dual potential ``max_k <u, Y_k> - w_k``, gauge min w = 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise ValidationError("dual weights must be a non-empty finite vector")
        object.__setattr__(self, "values", _frozen(canonicalize(v)))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class CellStats:
    """Monte Carlo cell masses and barycenters for one weight vector.

    Rows of ``barycenters`` for empty cells are NaN; ``empty`` flags them.
    """

    masses: np.ndarray
    barycenters: np.ndarray
    objective: float
    sample_count: int
    seed: int

    @property
    def empty(self) -> np.ndarray:
        return self.masses == 0


@dataclass(frozen=True, eq=False)
class GaussianRisk:
    """Centered Gaussian risk N(0, covariance)."""

    covariance: np.ndarray

    def __post_init__(self):
        cov = check_positive_definite(self.covariance, "risk covariance")
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def dim(self):
        return self.covariance.shape[0]
