import numpy as np
import pytest

from maxcorr.gaussian import (
    brenier_map_gaussian,
    comonotone_cross_cov,
    comonotone_sum_covariance,
    is_gaussian_comonotonic,
    max_corr_gaussian,
    pushforward_residual,
    sample_covariance,
    sqrt_psd,
)
from maxcorr.types import Gaussian, NumericalError, ValidationError, sample_baseline

from .conftest import random_pd


def test_sqrt_identity_and_diagonal():
    np.testing.assert_allclose(sqrt_psd(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_sqrt_residual_random(rng):
    b = rng.uniform(-1, 1, (4, 4))
    s = b @ b.T
    r = sqrt_psd(s)
    assert np.max(np.abs(r @ r - s)) <= 1e-9 * (1 + np.max(np.abs(s)))
    assert np.linalg.eigvalsh(r)[0] >= -1e-12
    np.testing.assert_array_equal(r, r.T)


def test_sqrt_clamps_roundoff():
    s = np.diag([1.0, -5e-11])
    np.testing.assert_allclose(sqrt_psd(s), np.diag([1.0, 0.0]))


@pytest.mark.parametrize("s", [np.diag([1.0, -1e-6]), np.array([[1.0, 0.5], [0.4, 1.0]])])
def test_sqrt_rejects(s):
    with pytest.raises(ValidationError):
        sqrt_psd(s)


def test_brenier_identity_and_collapse(rng):
    np.testing.assert_allclose(brenier_map_gaussian(np.eye(2), np.eye(2)), np.eye(2), atol=1e-14)
    sx = random_pd(rng, 3)
    np.testing.assert_allclose(brenier_map_gaussian(np.eye(3), sx), sqrt_psd(sx), atol=1e-12)


def test_brenier_push_forward_random(rng):
    su, sx = random_pd(rng, 3), random_pd(rng, 3)
    a = brenier_map_gaussian(su, sx)
    np.testing.assert_allclose(a @ su @ a, sx, rtol=0, atol=1e-8 * (1 + np.abs(sx).max()))
    assert np.linalg.eigvalsh(a)[0] > 0
    assert pushforward_residual(su, sx) <= 1e-8


def test_brenier_singular_baseline():
    with pytest.raises(NumericalError):
        brenier_map_gaussian(np.diag([1.0, 0.0]), np.eye(2))


@pytest.mark.parametrize("r", [-0.9, -0.3, 0.0, 0.5, 0.99])
def test_two_dim_formula(r):
    sx = np.array([[1.0, r], [r, 1.0]])
    assert max_corr_gaussian(np.eye(2), sx) == pytest.approx(np.sqrt(2 + 2 * np.sqrt(1 - r * r)), abs=1e-12)


def test_max_corr_examples():
    assert max_corr_gaussian(np.eye(2), np.eye(2)) == pytest.approx(2.0, abs=1e-14)
    assert max_corr_gaussian(np.eye(2), np.diag([1.0, 4.0])) == pytest.approx(3.0, abs=1e-14)


def test_max_corr_dimension_mismatch():
    with pytest.raises(ValidationError):
        max_corr_gaussian(np.eye(2), np.eye(3))


def test_max_corr_singular_risk_allowed():
    assert max_corr_gaussian(np.eye(2), np.diag([4.0, 0.0])) == pytest.approx(2.0)


def test_max_corr_monte_carlo_route(rng):
    # independent route: E<A U, U> on a Gaussian sample of the baseline
    su, sx = random_pd(rng, 3), random_pd(rng, 3)
    u = sample_baseline(Gaussian(su), 400_000, 11)
    a = brenier_map_gaussian(su, sx)
    mc = np.einsum("ij,ij->", u @ a, u) / u.shape[0]
    assert mc == pytest.approx(max_corr_gaussian(su, sx), rel=1e-2)


def test_cross_cov_examples():
    np.testing.assert_allclose(comonotone_cross_cov(np.eye(2), np.eye(2), np.eye(2)), np.eye(2))
    np.testing.assert_allclose(
        comonotone_cross_cov(np.eye(2), np.diag([4.0, 1.0]), np.diag([9.0, 1.0])), np.diag([6.0, 1.0])
    )


def test_cross_cov_rejects_singular_marginal():
    with pytest.raises(NumericalError):
        comonotone_cross_cov(np.eye(2), np.diag([1.0, 0.0]), np.eye(2))


def test_cross_cov_monte_carlo(rng):
    su, sx, sy = (random_pd(rng, 2) for _ in range(3))
    u = sample_baseline(Gaussian(su), 100_000, 3)
    x = u @ brenier_map_gaussian(su, sx)
    y = u @ brenier_map_gaussian(su, sy)
    m = comonotone_cross_cov(su, sx, sy)
    observed = x.T @ y / u.shape[0]
    scale = np.sqrt(np.trace(sx) * np.trace(sy))
    assert np.max(np.abs(observed - m)) <= 0.03 * scale
    # tr M is the correlation of the pair X + Y against U minus the two single terms
    lhs = np.einsum("ij,ij->", u, x + y) / u.shape[0]
    assert lhs == pytest.approx(max_corr_gaussian(su, sx) + max_corr_gaussian(su, sy), rel=2e-2)


def test_is_comonotonic_examples(rng):
    su, sx, sy = (random_pd(rng, 3) for _ in range(3))
    m = comonotone_cross_cov(su, sx, sy)
    assert is_gaussian_comonotonic(su, sx, sy, m, 1e-9)
    assert not is_gaussian_comonotonic(np.eye(2), np.eye(2), np.eye(2), -np.eye(2), 1e-3)
    with pytest.raises(ValidationError):
        is_gaussian_comonotonic(su, sx, sy, m, 0.0)
    with pytest.raises(ValidationError):
        is_gaussian_comonotonic(su, sx, sy, m[:2, :2], 1e-3)


def test_is_comonotonic_monte_carlo(rng):
    su, sx, sy = (random_pd(rng, 2) for _ in range(3))
    u = sample_baseline(Gaussian(su), 1_000_000, 8)
    x = u @ brenier_map_gaussian(su, sx)
    y = u @ brenier_map_gaussian(su, sy)
    assert is_gaussian_comonotonic(su, sx, sy, x.T @ y / u.shape[0], 0.01)


def test_comonotone_sum_additive(rng):
    su, sx, sy = (random_pd(rng, 4) for _ in range(3))
    rs = max_corr_gaussian(su, comonotone_sum_covariance(su, sx, sy))
    assert rs == pytest.approx(max_corr_gaussian(su, sx) + max_corr_gaussian(su, sy), abs=1e-8)


def test_sample_covariance():
    pts = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 4.0]])
    np.testing.assert_allclose(sample_covariance(pts), np.cov(pts.T))
    with pytest.raises(ValidationError):
        sample_covariance([[1.0, 2.0]])
