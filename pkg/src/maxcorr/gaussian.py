"""Closed forms for centered Gaussian risks against a centered Gaussian baseline.

With baseline U ~ N(0, S_U) and risk X ~ N(0, S_X), the linear map
``u -> A_X u`` with

    A_X = S_U^{-1/2} (S_U^{1/2} S_X S_U^{1/2})^{1/2} S_U^{-1/2}

is symmetric PSD and pushes N(0, S_U) to N(0, S_X). It follows that the
maximal correlation is ``tr (S_U^{1/2} S_X S_U^{1/2})^{1/2}`` and that X, Y
are comonotonic for this baseline iff ``E[X Y^T] = A_X S_U A_Y``.
"""

from __future__ import annotations

import numpy as np

from .types import NumericalError, ValidationError, check_symmetric

EIG_CLAMP = 1e-10
SINGULAR_RTOL = 1e-12


def _eigh_psd(s, name):
    s = check_symmetric(s, name)
    vals, vecs = np.linalg.eigh(s)
    if vals[0] < -EIG_CLAMP:
        raise ValidationError(f"{name} has eigenvalue {vals[0]:.3e} below -{EIG_CLAMP}")
    return np.maximum(vals, 0.0), vecs


def validate_psd(s, name="matrix") -> np.ndarray:
    """Return a symmetrized copy of ``s`` after checking it is PSD."""
    _eigh_psd(s, name)
    s = np.asarray(s, dtype=float)
    return (s + s.T) / 2


def sqrt_psd(s, name="matrix") -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues in ``[-1e-10, 0)`` are treated as round-off and clamped to
    zero; anything more negative raises :class:`ValidationError`.
    """
    vals, vecs = _eigh_psd(s, name)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return (root + root.T) / 2


def _sqrt_and_inv_sqrt_pd(s, name):
    vals, vecs = _eigh_psd(s, name)
    if vals[0] <= SINGULAR_RTOL * max(vals[-1], 1.0):
        raise NumericalError(f"{name} is singular (smallest eigenvalue {vals[0]:.3e})")
    r = np.sqrt(vals)
    return (vecs * r) @ vecs.T, (vecs / r) @ vecs.T


def _check_dims(*mats):
    dims = {m.shape for m in mats}
    if len(dims) != 1:
        raise ValidationError(f"dimension mismatch: {sorted(dims)}")


def _inner_root(sigma_u_sqrt, sigma_x):
    return sqrt_psd(sigma_u_sqrt @ sigma_x @ sigma_u_sqrt, "S_U^1/2 S_X S_U^1/2")


def brenier_map_gaussian(sigma_u, sigma_x) -> np.ndarray:
    """Matrix of the gradient-of-convex map sending N(0, sigma_u) to N(0, sigma_x)."""
    sigma_x = validate_psd(sigma_x, "sigma_x")
    root_u, inv_root_u = _sqrt_and_inv_sqrt_pd(sigma_u, "sigma_u")
    _check_dims(root_u, sigma_x)
    a = inv_root_u @ _inner_root(root_u, sigma_x) @ inv_root_u
    return (a + a.T) / 2


def max_corr_gaussian(sigma_u, sigma_x) -> float:
    """Maximal correlation ``tr (S_U^{1/2} S_X S_U^{1/2})^{1/2}``."""
    sigma_x = validate_psd(sigma_x, "sigma_x")
    root_u, _ = _sqrt_and_inv_sqrt_pd(sigma_u, "sigma_u")
    _check_dims(root_u, sigma_x)
    vals = np.linalg.eigvalsh(root_u @ sigma_x @ root_u)
    return float(np.sqrt(np.maximum(vals, 0.0)).sum())


def comonotone_cross_cov(sigma_u, sigma_x, sigma_y) -> np.ndarray:
    """Cross-covariance E[X Y^T] of the comonotonic pair (A_X U, A_Y U)."""
    root_u, inv_root_u = _sqrt_and_inv_sqrt_pd(sigma_u, "sigma_u")
    for m, name in ((sigma_x, "sigma_x"), (sigma_y, "sigma_y")):
        _sqrt_and_inv_sqrt_pd(m, name)
    sigma_x = validate_psd(sigma_x, "sigma_x")
    sigma_y = validate_psd(sigma_y, "sigma_y")
    _check_dims(root_u, sigma_x, sigma_y)
    return inv_root_u @ _inner_root(root_u, sigma_x) @ _inner_root(root_u, sigma_y) @ inv_root_u


def is_gaussian_comonotonic(sigma_u, sigma_x, sigma_y, observed_cross_cov, tol: float) -> bool:
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol!r}")
    expected = comonotone_cross_cov(sigma_u, sigma_x, sigma_y)
    observed = np.asarray(observed_cross_cov, dtype=float)
    if observed.shape != expected.shape:
        raise ValidationError(f"observed cross-covariance has shape {observed.shape}, expected {expected.shape}")
    return bool(np.max(np.abs(observed - expected)) <= tol)


def comonotone_sum_covariance(sigma_u, sigma_x, sigma_y) -> np.ndarray:
    """Covariance of X + Y for the comonotonic pair with marginals S_X, S_Y."""
    m = comonotone_cross_cov(sigma_u, sigma_x, sigma_y)
    s = np.asarray(sigma_x, float) + np.asarray(sigma_y, float) + m + m.T
    return (s + s.T) / 2


def pushforward_residual(sigma_u, sigma_x) -> float:
    """Relative residual ``|A S_U A - S_X|_inf / (1 + |S_X|_inf)``."""
    a = brenier_map_gaussian(sigma_u, sigma_x)
    sigma_x = np.asarray(sigma_x, float)
    err = np.max(np.abs(a @ np.asarray(sigma_u, float) @ a - sigma_x))
    return float(err / (1.0 + np.max(np.abs(sigma_x))))


def sample_covariance(points) -> np.ndarray:
    """Unbiased sample covariance of the rows of ``points``."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValidationError("need at least two sample rows")
    return np.atleast_2d(np.cov(x, rowvar=False))
