import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from smoothloc.errors import ConfigurationError, DomainError, EstimatorError
from smoothloc.estimatorhd import (
    ConfigHd,
    bucket_count,
    d_eff,
    geometric_median,
    geometric_median_of_means,
    global_mle_hd,
    local_mle_hd,
    m_norm,
    mahalanobis_bound,
    score_deviation_bound,
    theoretical_bound_hd,
)
from smoothloc.model import DensityHd, Gaussian, Laplace
from smoothloc.rng import NOISE, RngSeed
from smoothloc.smoothing import FisherMatrix, SmoothedModelHd

GAUSS8 = DensityHd((Gaussian(0.0, 1.0),) * 8)
LAPLACE4 = DensityHd((Laplace(0.0, 1.0),) * 4)


def diagonal_fisher(values):
    d = len(values)
    return FisherMatrix(np.diag(values), np.zeros((d, d)), "quadrature")


def test_m_norm_examples():
    assert m_norm(np.array([3.0, 4.0]), np.eye(2)) == 5.0
    assert m_norm(np.array([7.0, -2.0]), np.zeros((2, 2))) == 0.0
    assert math.isclose(m_norm(np.array([1.0, 1.0]), np.diag([2.0, 0.0])), math.sqrt(2.0))


def test_m_norm_rejects_bad_matrices():
    with pytest.raises(DomainError):
        m_norm(np.ones(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DomainError):
        m_norm(np.ones(2), np.diag([1.0, -1.0]))


def test_bound_example():
    bound = theoretical_bound_hd(diagonal_fisher([0.5] * 8), np.eye(8), 500, 0.05, 0.1)
    expected = 1.1 * math.sqrt(16 / 500) + 5 * math.sqrt(2 * math.log(80) / 500)
    assert math.isclose(bound, expected, rel_tol=1e-12)
    assert bound == pytest.approx(0.858743, abs=1e-6)


def test_mahalanobis_case():
    fisher = diagonal_fisher([0.3, 0.7, 1.2])
    bound = theoretical_bound_hd(fisher, fisher.matrix, 1000, 0.1, 0.25)
    assert math.isclose(bound, mahalanobis_bound(3, 1000, 0.1, 0.25), rel_tol=1e-12)


def test_one_dimensional_reduction():
    info, n, delta, eta = 0.7, 800, 0.1, 0.25
    bound = theoretical_bound_hd(diagonal_fisher([info]), np.eye(1), n, delta, eta)
    expected = (1 + eta) * math.sqrt(1 / (info * n)) + 5 * math.sqrt(math.log(4 / delta) / (info * n))
    assert math.isclose(bound, expected, rel_tol=1e-12)


@given(c=st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=50)
def test_bound_is_homogeneous_in_m(c):
    fisher = diagonal_fisher([0.4, 0.9, 2.0])
    M = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
    base = theoretical_bound_hd(fisher, M, 300, 0.05, 0.25)
    assert math.isclose(theoretical_bound_hd(fisher, c**2 * M, 300, 0.05, 0.25), c * base, rel_tol=1e-9)


def test_effective_dimension():
    assert d_eff(np.eye(5)) == 5.0
    assert math.isclose(d_eff(np.diag([4.0, 1.0, 1.0])), 1.5)
    assert d_eff(np.diag([1.0, 0.0])) == 1.0
    assert d_eff(np.zeros((2, 2))) == 0.0


def test_deviation_bound_shrinks_with_n():
    fisher = diagonal_fisher([0.5] * 4)
    small = score_deviation_bound(fisher, 1.0, np.eye(4), 100, 0.1)
    large = score_deviation_bound(fisher, 1.0, np.eye(4), 10_000, 0.1)
    assert 0 < large < small


def test_bucket_count():
    assert bucket_count(0.05) == math.ceil(3.5 * math.log(40))
    assert bucket_count(0.1, multiplier=1.0) == 3


def test_geometric_median_of_square_corners():
    rows = [[0, 0], [0, 0], [1, 0], [1, 0], [0, 1], [0, 1], [1, 1], [1, 1]]
    np.testing.assert_allclose(geometric_median_of_means(rows, 0.1, buckets=4), [0.5, 0.5], atol=1e-12)


def test_geometric_median_of_identical_samples():
    v = np.array([1.25, -3.0, 7.5])
    out = geometric_median_of_means(np.tile(v, (100, 1)), 0.05)
    assert np.array_equal(out, v)


def test_geometric_median_resists_outlier():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1e6, 1e6]])
    assert np.linalg.norm(geometric_median(points)) < 2.0


def test_median_of_means_needs_two_samples_per_bucket():
    with pytest.raises(ConfigurationError, match="at least 26"):
        geometric_median_of_means(np.zeros((25, 2)), 0.05)


def test_median_of_means_is_coordinate_permutation_equivariant():
    x = LAPLACE4.sample(1000, RngSeed(12))
    perm = [2, 0, 3, 1]
    a = geometric_median_of_means(x, 0.05, RngSeed(13))
    b = geometric_median_of_means(x[:, perm], 0.05, RngSeed(13))
    np.testing.assert_allclose(b, a[perm], atol=1e-9)


def test_bound_is_coordinate_permutation_invariant():
    values = [0.2, 0.5, 0.9]
    a = theoretical_bound_hd(diagonal_fisher(values), np.eye(3), 500, 0.1, 0.25)
    b = theoretical_bound_hd(diagonal_fisher(values[::-1]), np.eye(3), 500, 0.1, 0.25)
    assert math.isclose(a, b, rel_tol=1e-12)


def test_local_gaussian_step_collapses_to_mean():
    x = GAUSS8.shifted(np.arange(8.0)).sample(300, RngSeed(1))
    seed = RngSeed(2)
    perturbed = x + seed.generator(NOISE).normal(0.0, 1.0, x.shape)
    out = local_mle_hd(GAUSS8, 1.0, x, np.full(8, 0.3), seed)
    np.testing.assert_allclose(out, perturbed.mean(axis=0), rtol=1e-12, atol=1e-12)


def test_local_step_fixed_point():
    x = GAUSS8.sample(100, RngSeed(3))
    seed = RngSeed(4)
    center = (x + seed.generator(NOISE).normal(0.0, 0.5, x.shape)).mean(axis=0)
    np.testing.assert_allclose(local_mle_hd(GAUSS8, 0.5, x, center, seed), center, atol=1e-12)


def test_local_step_names_underflowing_coordinate():
    x = LAPLACE4.sample(50, RngSeed(5))
    with pytest.raises(EstimatorError) as info:
        local_mle_hd(LAPLACE4, 0.5, x, np.array([0.0, 0.0, 1e5, 0.0]), RngSeed(6))
    assert info.value.coordinate == 2


def test_config_validation():
    cfg = ConfigHd(delta=0.05, r=1.0, eta=0.1)
    assert cfg.split_fraction == pytest.approx(0.01)
    np.testing.assert_array_equal(cfg.norm_matrix(3), np.eye(3))
    with pytest.raises(ValueError):
        ConfigHd(delta=0.05, r=1.0, M=[[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ConfigurationError):
        ConfigHd(delta=0.05, r=1.0, M=[[1.0]]).norm_matrix(2)


def test_global_gaussian_example():
    n = 500
    x = GAUSS8.sample(n, RngSeed(21))
    report = global_mle_hd(GAUSS8, x, ConfigHd(delta=0.05, r=1.0, eta=0.1), RngSeed(22))
    assert report.n_used_init == 32
    assert report.n_used_local == n - 32
    assert report.m_norm_error_bound == pytest.approx(0.8587, abs=1e-4)
    assert report.d_eff_T == pytest.approx(8.0)
    assert report.d_eff_sigma == pytest.approx(8.0)
    assert report.initial_estimator == "geometric-median-of-means"
    assert report.deviation_bound > 0
    np.testing.assert_allclose(report.fisher.matrix, 0.5 * np.eye(8))
    assert np.linalg.norm(report.lambda_hat) < report.m_norm_error_bound


def test_zero_norm_matrix_gives_zero_bounds():
    gauss2 = DensityHd((Gaussian(0.0, 1.0),) * 2)
    x = gauss2.sample(500, RngSeed(23))
    cfg = ConfigHd(delta=0.1, r=1.0, M=[[0.0, 0.0], [0.0, 0.0]])
    report = global_mle_hd(gauss2, x, cfg, RngSeed(24))
    assert report.m_norm_error_bound == 0.0
    assert report.deviation_bound == 0.0
    assert report.d_eff_T == 0.0
    assert report.d_eff_sigma == pytest.approx(2.0)
    assert np.all(np.isfinite(report.lambda_hat))


def test_global_rejects_large_radius():
    x = GAUSS8.sample(500, RngSeed(0))
    with pytest.raises(ConfigurationError, match="exceeds"):
        global_mle_hd(GAUSS8, x, ConfigHd(delta=0.05, r=1.5), RngSeed(0))


def test_global_rejects_tiny_samples():
    x = GAUSS8.sample(30, RngSeed(0))
    with pytest.raises(ConfigurationError):
        global_mle_hd(GAUSS8, x, ConfigHd(delta=0.05, r=1.0), RngSeed(0))


def test_global_rejects_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        global_mle_hd(GAUSS8, np.zeros((500, 3)), ConfigHd(delta=0.05, r=1.0), RngSeed(0))


def test_global_is_translation_equivariant():
    c = np.array([10.0, -3.5, 0.25, 100.0])
    x = LAPLACE4.sample(2000, RngSeed(31))
    cfg = ConfigHd(delta=0.1, r=0.5)
    a = global_mle_hd(LAPLACE4, x, cfg, RngSeed(32))
    b = global_mle_hd(LAPLACE4, x + c, cfg, RngSeed(32))
    np.testing.assert_allclose(b.lambda_initial, a.lambda_initial + c, atol=1e-6)
    np.testing.assert_allclose(b.lambda_hat, a.lambda_hat + c, atol=1e-6)
    assert a.m_norm_error_bound == b.m_norm_error_bound


def test_local_step_improves_a_perturbed_start():
    lam = np.array([1.0, -1.0, 2.0, 0.0])
    m = SmoothedModelHd(LAPLACE4, 0.5)
    x = LAPLACE4.shifted(lam).sample(5000, RngSeed(40))
    out = local_mle_hd(LAPLACE4, 0.5, x, lam + 0.05, RngSeed(41))
    inv = m.fisher().inverse()
    bound = 1.3 * (math.sqrt(np.trace(inv) / 5000) + 4 * math.sqrt(np.linalg.norm(inv, 2) * math.log(20) / 5000))
    assert np.linalg.norm(out - lam) <= bound


@pytest.mark.slow
def test_median_of_means_tail():
    n, delta, trials = 10_000, 0.05, 500
    lam = np.array([0.5, -0.5, 1.0, 2.0])
    errors = []
    for t in range(trials):
        x = LAPLACE4.shifted(lam).sample(n, RngSeed(50, stream=t))
        errors.append(np.linalg.norm(geometric_median_of_means(x, delta, RngSeed(51, stream=t)) - lam))
    sigma = LAPLACE4.covariance()
    bound = 3 * (math.sqrt(np.trace(sigma) / n) + math.sqrt(np.linalg.norm(sigma, 2) * math.log(1 / delta) / n))
    assert np.quantile(errors, 1 - delta) <= bound


@pytest.mark.slow
def test_global_coverage_on_gaussian_product():
    n, trials = 500, 300
    cfg = ConfigHd(delta=0.1, r=1.0, eta=0.1)
    misses = 0
    for t in range(trials):
        x = GAUSS8.sample(n, RngSeed(60, stream=t))
        report = global_mle_hd(GAUSS8, x, cfg, RngSeed(61, stream=t))
        misses += np.linalg.norm(report.lambda_hat) > report.m_norm_error_bound
    assert misses / trials <= 0.13


@pytest.mark.slow
def test_local_step_concentrates_on_laplace_product():
    lam, n, r, trials = np.array([1.0, -1.0, 2.0, 0.0]), 5000, 0.5, 200
    inv = SmoothedModelHd(LAPLACE4, r).fisher().inverse()
    errors = []
    for t in range(trials):
        x = LAPLACE4.shifted(lam).sample(n, RngSeed(70, stream=t))
        errors.append(np.linalg.norm(local_mle_hd(LAPLACE4, r, x, lam + 0.05, RngSeed(71, stream=t)) - lam))
    bound = 1.3 * (math.sqrt(np.trace(inv) / n) + 4 * math.sqrt(np.linalg.norm(inv, 2) * math.log(20) / n))
    assert np.quantile(errors, 0.9) <= bound


@pytest.mark.slow
def test_global_coverage_on_laplace_product():
    n, trials = 5000, 200
    lam = np.array([0.5, -0.5, 1.0, 2.0])
    cfg = ConfigHd(delta=0.1, r=0.5, eta=0.25)
    misses = 0
    for t in range(trials):
        x = LAPLACE4.shifted(lam).sample(n, RngSeed(80, stream=t))
        report = global_mle_hd(LAPLACE4, x, cfg, RngSeed(81, stream=t))
        misses += np.linalg.norm(report.lambda_hat - lam) > report.m_norm_error_bound
    assert misses / trials <= 0.13
