import numpy as np
import pytest

from maxcorr.types import (
    CHUNK_SIZE,
    BernoulliVector,
    DualWeights,
    Empirical,
    EmpiricalDistribution,
    Gaussian,
    GaussianRisk,
    UniformCube,
    ValidationError,
    canonicalize,
    from_samples,
    sample_baseline,
    validate_empirical,
)


def test_validate_two_atoms():
    p = validate_empirical([[0.0], [1.0]], [0.5, 0.5])
    assert (p.dim, p.n) == (1, 2)


def test_duplicate_atom_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        validate_empirical([[0.0], [0.0]], [0.5, 0.5])


def test_weight_sum_rejected():
    with pytest.raises(ValidationError, match="sum"):
        validate_empirical([[0.0], [1.0]], [0.5, 0.6])


def test_small_weight_drift_renormalized():
    p = validate_empirical([[0.0], [1.0]], [0.5, 0.5 + 5e-10])
    assert abs(p.weights.sum() - 1.0) < 1e-15


@pytest.mark.parametrize(
    "atoms, weights",
    [
        ([[0.0], [1.0]], [1.0, 0.0]),
        ([[0.0], [1.0]], [1.5, -0.5]),
        ([[0.0, np.nan], [1.0, 1.0]], None),
        ([[0.0], [1.0]], [1.0]),
        ([[0.0, 1.0], [1.0]], None),
        (np.zeros((0, 2)), None),
    ],
)
def test_malformed_input_rejected(atoms, weights):
    with pytest.raises(ValidationError):
        validate_empirical(atoms, weights)


def test_atoms_sorted_and_read_only():
    p = validate_empirical([[1.0, 0.0], [0.0, 5.0], [0.0, 1.0]], [0.2, 0.3, 0.5])
    np.testing.assert_array_equal(p.atoms, [[0, 1], [0, 5], [1, 0]])
    np.testing.assert_allclose(p.weights, [0.5, 0.3, 0.2])
    with pytest.raises(ValueError):
        p.atoms[0, 0] = 3.0


def test_from_samples_merges_repeats():
    p = from_samples([[1.0], [0.0], [1.0], [1.0]])
    np.testing.assert_allclose(p.weights, [0.25, 0.75])


def test_empirical_moments():
    p = validate_empirical([[0.0, 0.0], [2.0, 4.0]], [0.75, 0.25])
    np.testing.assert_allclose(p.mean(), [0.5, 1.0])
    np.testing.assert_allclose(p.covariance(), 0.1875 * np.array([[4, 8], [8, 16]]))


def test_uniform_sample_in_cube():
    pts = sample_baseline(UniformCube(2), 4, 7)
    assert pts.shape == (4, 2)
    assert np.all((pts >= 0) & (pts <= 1))


def test_bernoulli_high_point_frequency():
    pts = sample_baseline(BernoulliVector(3, 0.5), 100_000, 1)
    hit = np.all(pts == 2.0, axis=1)
    assert np.all(hit | np.all(pts == 0.0, axis=1))
    assert abs(hit.mean() - 0.5) <= 0.01


def test_bernoulli_mean_is_ones():
    pts = sample_baseline(BernoulliVector(2, 0.1), 200_000, 3)
    np.testing.assert_allclose(pts.mean(axis=0), [1.0, 1.0], atol=0.03)


def test_gaussian_sample_covariance():
    pts = sample_baseline(Gaussian(np.eye(2)), 100_000, 1)
    assert np.max(np.abs(np.cov(pts, rowvar=False) - np.eye(2))) <= 0.02


def test_gaussian_rejects_indefinite():
    with pytest.raises(ValidationError):
        Gaussian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValidationError):
        Gaussian(np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_empirical_baseline_frequencies():
    p = validate_empirical([[0.0], [1.0], [2.0]], [0.2, 0.3, 0.5])
    pts = sample_baseline(Empirical(p), 100_000, 5)
    freq = np.array([np.mean(pts[:, 0] == v) for v in (0, 1, 2)])
    np.testing.assert_allclose(freq, [0.2, 0.3, 0.5], atol=0.01)


@pytest.mark.parametrize("count", [0, -3, 2.5])
def test_bad_count(count):
    with pytest.raises(ValidationError):
        sample_baseline(UniformCube(1), count, 0)


def test_sampling_deterministic_across_workers():
    count = 3 * CHUNK_SIZE + 17
    a = sample_baseline(Gaussian(np.diag([1.0, 2.0])), count, 42)
    b = sample_baseline(Gaussian(np.diag([1.0, 2.0])), count, 42, workers=4)
    c = sample_baseline(Gaussian(np.diag([1.0, 2.0])), count, 42)
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_sampling_prefix_stable():
    # chunk keys do not depend on the total count
    a = sample_baseline(UniformCube(2), 2 * CHUNK_SIZE, 9)
    b = sample_baseline(UniformCube(2), CHUNK_SIZE + 5, 9)
    np.testing.assert_array_equal(a[: CHUNK_SIZE + 5], b)


def test_streams_differ():
    a = sample_baseline(UniformCube(1), 100, 3)
    b = sample_baseline(UniformCube(1), 100, 3, stream=1)
    assert not np.array_equal(a, b)


def test_canonicalize():
    w = canonicalize([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(w, [2.0, 0.0, 1.0])
    np.testing.assert_array_equal(canonicalize(w), w)
    assert DualWeights([5.0, 7.0]).values.tolist() == [0.0, 2.0]


def test_dual_weights_reject_nonfinite():
    with pytest.raises(ValidationError):
        DualWeights([0.0, np.inf])


def test_gaussian_risk_validation():
    assert GaussianRisk(np.eye(3)).dim == 3
    with pytest.raises(ValidationError):
        GaussianRisk(np.zeros((2, 2)))


@pytest.mark.parametrize("dim, alpha", [(0, 0.5), (2, 0.0), (2, 1.0)])
def test_bernoulli_validation(dim, alpha):
    with pytest.raises(ValidationError):
        BernoulliVector(dim, alpha)


def test_map_atoms_keeps_weights():
    p = validate_empirical([[0.0], [1.0]], [0.3, 0.7])
    q = p.map_atoms(lambda a: 2 * a + 1)
    np.testing.assert_array_equal(q.atoms[:, 0], [1.0, 3.0])
    np.testing.assert_allclose(q.weights, [0.3, 0.7])
    assert isinstance(q, EmpiricalDistribution)
