"""Property-based tests of the invariants that must hold on every input."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maxcorr import gaussian, oracle
from maxcorr.risk import expected_shortfall_breakdown, expected_shortfall_mv, max_corr_bernoulli
from maxcorr.transport import SolveConfig, assign_cells, cell_stats, objective, potential_eval
from maxcorr.types import (
    BernoulliVector,
    DualWeights,
    Gaussian,
    UniformCube,
    canonicalize,
    from_samples,
    sample_baseline,
    validate_empirical,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**32 - 1)


def pd_matrix(seed, d):
    rng = np.random.default_rng(seed)
    b = rng.uniform(-1, 1, (d, d))
    return b @ b.T + 0.05 * np.eye(d)


@st.composite
def targets(draw, max_n=8, max_d=3, dim=None):
    d = dim or draw(st.integers(1, max_d))
    n = draw(st.integers(1, max_n))
    atoms = draw(hnp.arrays(float, (n, d), elements=finite, unique=False))
    raw = draw(hnp.arrays(float, n, elements=st.floats(0.05, 1.0)))
    return from_samples(atoms, raw / raw.sum())


# --- weights and samples ---------------------------------------------------


@given(hnp.arrays(float, st.integers(1, 12), elements=finite), finite)
def test_gauge_idempotent_and_shift_free(v, c):
    once = canonicalize(v)
    assert once.min() == 0
    np.testing.assert_array_equal(canonicalize(once), once)
    np.testing.assert_allclose(DualWeights(v + c).values, once, atol=1e-12)


@given(seeds, st.integers(1, 3), st.integers(1, 20000))
@settings(max_examples=15)
def test_sampling_pure_and_worker_free(seed, d, count):
    a = sample_baseline(UniformCube(d), count, seed)
    b = sample_baseline(UniformCube(d), count, seed, workers=3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (count, d) and np.all((a >= 0) & (a < 1))


@given(targets(), seeds)
def test_row_order_is_invisible(t, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(t.n)
    raw = rng.uniform(0.1, 1, t.n)
    t = validate_empirical(t.atoms, raw / raw.sum())
    u = validate_empirical(np.array(t.atoms)[perm], (raw / raw.sum())[perm])
    np.testing.assert_array_equal(u.atoms, t.atoms)
    np.testing.assert_array_equal(u.weights, t.weights)
    # raw ordering must not matter either
    r = validate_empirical(np.array(t.atoms)[::-1], (raw / raw.sum())[::-1])
    np.testing.assert_array_equal(r.weights, t.weights)


@given(targets())
def test_weights_form_a_probability_vector(t):
    assert np.all(t.weights > 0)
    assert abs(t.weights.sum() - 1) <= 1e-12


# --- Gaussian closed forms --------------------------------------------------


@given(seeds, st.integers(1, 5))
def test_trace_norm_with_identity_baseline(seed, d):
    sx = pd_matrix(seed, d)
    expected = np.sqrt(np.linalg.eigvalsh(sx)).sum()
    assert gaussian.max_corr_gaussian(np.eye(d), sx) == pytest.approx(expected, rel=1e-10)


@given(seeds, st.integers(1, 5), st.floats(0.01, 20))
def test_scale_equivariance(seed, d, lam):
    su, sx = pd_matrix(seed, d), pd_matrix(seed + 1, d)
    r = gaussian.max_corr_gaussian(su, sx)
    assert gaussian.max_corr_gaussian(su, lam**2 * sx) == pytest.approx(lam * r, rel=1e-9)


@given(seeds, st.integers(1, 5))
def test_subadditive_for_independent_sum(seed, d):
    su, sx, sy = (pd_matrix(seed + k, d) for k in range(3))
    lhs = gaussian.max_corr_gaussian(su, sx + sy)
    assert lhs <= gaussian.max_corr_gaussian(su, sx) + gaussian.max_corr_gaussian(su, sy) + 1e-10


@given(seeds, st.integers(1, 5))
def test_rotation_invariance(seed, d):
    su, sx = pd_matrix(seed, d), pd_matrix(seed + 7, d)
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    a = gaussian.max_corr_gaussian(su, sx)
    b = gaussian.max_corr_gaussian(q @ su @ q.T, q @ sx @ q.T)
    assert a == pytest.approx(b, rel=1e-9)


@given(seeds, st.integers(1, 5))
def test_comonotone_pair_is_additive(seed, d):
    su, sx, sy = (pd_matrix(seed + k, d) for k in range(3))
    s_sum = gaussian.comonotone_sum_covariance(su, sx, sy)
    total = gaussian.max_corr_gaussian(su, sx) + gaussian.max_corr_gaussian(su, sy)
    assert gaussian.max_corr_gaussian(su, s_sum) == pytest.approx(total, rel=1e-8)
    assert gaussian.pushforward_residual(su, sx) <= 1e-8


# --- discrete oracles --------------------------------------------------------


@given(seeds, st.integers(1, 6), st.integers(1, 3))
def test_assignment_beats_every_permutation(seed, n, d):
    rng = np.random.default_rng(seed)
    u, y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    value, coupling = oracle.max_corr_assignment(u, y, "assignment")
    for _ in range(10):
        perm = rng.permutation(n)
        assert np.sum(u * y[perm]) / n <= value + 1e-12
    dense = coupling.toarray()
    np.testing.assert_allclose(dense.sum(axis=0), 1 / n)
    np.testing.assert_allclose(dense.sum(axis=1), 1 / n)


@given(seeds, st.integers(2, 5), st.integers(2, 6))
def test_lp_handles_unequal_weights(seed, n, m):
    rng = np.random.default_rng(seed)
    src = validate_empirical(rng.random((n, 2)), rng.dirichlet(np.ones(n)))
    tgt = validate_empirical(rng.standard_normal((m, 2)), rng.dirichlet(np.ones(m)))
    value, coupling = oracle.max_corr_assignment(src, tgt, "lp")
    dense = coupling.toarray()
    np.testing.assert_allclose(dense.sum(axis=1), src.weights, atol=1e-12)
    np.testing.assert_allclose(dense.sum(axis=0), tgt.weights, atol=1e-12)
    independent = float(src.mean() @ tgt.mean())
    assert value >= independent - 1e-12


@given(seeds, st.integers(2, 4))
@settings(max_examples=15)
def test_probe_never_exceeds_bound(seed, n):
    rng = np.random.default_rng(seed)
    s, a, b = rng.random((n, 2)), rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    best, cert = oracle.structure_neutrality_probe(s, a, b)
    assert cert["excess"] <= 1e-10
    assert best == pytest.approx(cert["bound"], abs=1e-10)


# --- expected shortfall ------------------------------------------------------

alphas = st.floats(1e-3, 1 - 1e-3)


@given(targets(), alphas)
def test_es_matches_scaled_bernoulli_oracle(t, alpha):
    sums = from_samples(t.atoms.sum(axis=1), t.weights)
    scaled = alpha * oracle.max_corr_1d_quantile(BernoulliVector(1, alpha), sums)
    assert abs(expected_shortfall_mv(t, alpha) - scaled) <= 1e-10 * max(1, abs(scaled))


@given(targets(), alphas)
def test_es_counts_exactly_alpha(t, alpha):
    es = expected_shortfall_breakdown(t, alpha)
    s = t.atoms.sum(axis=1)
    above = t.weights[s > es.cutoff].sum()
    at_cutoff = t.weights[s == es.cutoff].sum()
    assert above <= alpha + 1e-12
    assert above + at_cutoff >= alpha - 1e-12
    assert 0 < es.boundary_fraction <= 1 + 1e-12
    assert es.boundary_fraction * at_cutoff == pytest.approx(alpha - above, abs=1e-12)


@given(targets(), alphas, alphas)
def test_tail_average_decreases_with_alpha(t, a, b):
    lo, hi = sorted((a, b))
    assert max_corr_bernoulli(t, lo) >= max_corr_bernoulli(t, hi) - 1e-9


@given(targets(), alphas, finite)
def test_es_translation(t, alpha, m):
    shifted = from_samples(t.atoms + m / t.dim, t.weights)
    assert max_corr_bernoulli(shifted, alpha) == pytest.approx(max_corr_bernoulli(t, alpha) + m, abs=1e-8)


# --- dual potential and objective -------------------------------------------


@given(targets(max_d=3), seeds)
def test_potential_dominates_each_plane(t, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(t.n)
    u = rng.standard_normal(t.dim)
    value, k = potential_eval(w, t, u)
    planes = t.atoms @ u - w
    assert value == planes.max() and k == int(np.argmax(planes))


@given(targets(max_d=3), seeds)
def test_potential_is_convex(t, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(t.n)
    u, v = rng.standard_normal((2, t.dim))
    mid = potential_eval(w, t, (u + v) / 2)[0]
    assert mid <= (potential_eval(w, t, u)[0] + potential_eval(w, t, v)[0]) / 2 + 1e-12


@given(targets(max_n=30, dim=2), seeds)
@settings(max_examples=20)
def test_assignment_is_a_best_response(t, seed):
    pts = np.random.default_rng(seed).random((300, 2))
    w = np.random.default_rng(seed + 1).random(t.n)
    a = assign_cells(pts, t, w, need_second=True)
    scores = pts @ t.atoms.T - w
    np.testing.assert_allclose(a.value, scores.max(axis=1), atol=1e-12)
    if t.n == 1:
        assert a.gap is None
        return
    top2 = np.sort(scores, axis=1)[:, -2:]
    np.testing.assert_allclose(a.gap, top2[:, 1] - top2[:, 0], atol=1e-12)
    np.testing.assert_allclose(scores[np.arange(300), a.second], top2[:, 0], atol=1e-12)


@given(st.integers(2, 6), seeds)
@settings(max_examples=10)
def test_objective_gradient_is_excess_supply(n, seed):
    rng = np.random.default_rng(seed)
    t = validate_empirical(rng.random((n, 2)))
    cfg = SolveConfig(sample_count=20000, seed=seed % 1000)
    w = rng.uniform(0, 0.3, n)
    grad = t.weights - cell_stats(UniformCube(2), t, w, cfg).masses
    h = 1e-4
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd = (objective(UniformCube(2), t, w + e, cfg) - objective(UniformCube(2), t, w - e, cfg)) / (2 * h)
        assert fd == pytest.approx(grad[k], abs=2e-3)


@given(st.integers(2, 6), seeds)
@settings(max_examples=10)
def test_objective_bounds_primal(n, seed):
    rng = np.random.default_rng(seed)
    t = validate_empirical(rng.standard_normal((n, 2)))
    cfg = SolveConfig(sample_count=5000, seed=1)
    w = rng.standard_normal(n)
    pts = sample_baseline(Gaussian.standard(2), 5000, 1)
    # any coupling of the sample with the target gives a lower bound
    assign = rng.integers(0, n, 5000)
    weak = float(np.mean(np.sum(pts * t.atoms[assign], axis=1)))
    masses = np.bincount(assign, minlength=n) / 5000
    assume(np.all(masses > 0))
    bound = objective(Gaussian.standard(2), t, w, cfg) + float((masses - t.weights) @ w)
    assert weak <= bound + 1e-9
