import math

import numpy as np
import pytest
from scipy import stats

from smoothloc.errors import ConfigurationError, DomainError, PreconditionError, TailUnderflowError
from smoothloc.model import DensityHd, Gaussian, GaussianMixture, GaussianSawtooth, Laplace
from smoothloc.rng import RngSeed
from smoothloc.smoothing import (
    FisherMatrix,
    Quadrature,
    SmoothedModel1d,
    SmoothedModelHd,
    check_score_inversion_bias,
    expected_score_taylor_check,
    expected_shifted_score_1d,
    fisher_1d,
    fisher_hd,
    fisher_lower_bound_check,
    fisher_sandwich,
    score_moment_check,
    smoothed_1d,
    smoothed_pdf_1d,
    smoothed_score_1d,
    smoothed_score_hd,
)

LAPLACE = Laplace(0.0, 1.0)
ASYMMETRIC = GaussianMixture(((0.9, 0.0, 0.1), (0.1, 5.0, 1.0)))
BASES = [Gaussian(0.0, 1.0), LAPLACE, ASYMMETRIC, GaussianSawtooth(0.05, 4.0)]


def laplace_smoothed_pdf(x, r):
    a = (x - r**2) / r
    b = -(x + r**2) / r
    return 0.5 * math.exp(r**2 / 2) * (math.exp(-x) * stats.norm.cdf(a) + math.exp(x) * stats.norm.cdf(b))


def laplace_smoothed_score(x, r):
    a = (x - r**2) / r
    b = -(x + r**2) / r
    slope = 0.5 * math.exp(r**2 / 2) * (-math.exp(-x) * stats.norm.cdf(a) + math.exp(x) * stats.norm.cdf(b))
    return slope / laplace_smoothed_pdf(x, r)


def test_gaussian_smoothed_pdf_is_wider_gaussian():
    m = smoothed_1d(Gaussian(0.0, 1.0), 1.0)
    assert m.is_analytic
    assert math.isclose(smoothed_pdf_1d(m, 0.0), 1.0 / math.sqrt(4.0 * math.pi), rel_tol=1e-12)


@pytest.mark.parametrize("mu,sigma,r", [(0.0, 1.0, 1.0), (2.0, 0.5, 0.3), (-1.0, 3.0, 2.0)])
def test_gaussian_closed_forms(mu, sigma, r):
    m = smoothed_1d(Gaussian(mu, sigma), r)
    s = math.sqrt(sigma**2 + r**2)
    x = np.linspace(mu - 6 * s, mu + 6 * s, 101)
    np.testing.assert_allclose(m.pdf(x), stats.norm.pdf(x, mu, s), rtol=1e-8, atol=1e-14)
    np.testing.assert_allclose(m.score(x), -(x - mu) / s**2, atol=1e-8)
    assert math.isclose(fisher_1d(m), 1.0 / s**2, rel_tol=1e-6)


def test_gaussian_score_example():
    assert math.isclose(smoothed_score_1d(smoothed_1d(Gaussian(0.0, 1.0), 1.0), 1.0), -0.5)


@pytest.mark.parametrize("r", [0.5, 1.0])
def test_laplace_pdf_matches_closed_form(r):
    m = smoothed_1d(LAPLACE, r)
    assert not m.is_analytic
    assert m.converged
    for x in [-3.0, -0.7, 0.0, 0.25, 1.0, 4.0]:
        assert math.isclose(m.pdf(x), laplace_smoothed_pdf(x, r), rel_tol=1e-7)


@pytest.mark.parametrize("r", [0.5, 1.0])
def test_laplace_score_matches_closed_form(r):
    m = smoothed_1d(LAPLACE, r)
    assert smoothed_score_1d(m, 0.0) == pytest.approx(0.0, abs=1e-10)
    for x in [-3.0, -0.7, 0.25, 1.0, 4.0]:
        assert math.isclose(m.score(x), laplace_smoothed_score(x, r), abs_tol=1e-6)


def test_score_is_vectorized_and_shape_preserving():
    m = smoothed_1d(LAPLACE, 0.5)
    x = np.linspace(-2, 2, 12).reshape(3, 4)
    out = m.score(x)
    assert out.shape == (3, 4)
    assert math.isclose(out[1, 2], m.score(float(x[1, 2])), rel_tol=1e-12)


def test_symmetric_base_gives_mirrored_pdf():
    m = smoothed_1d(LAPLACE.shifted(2.0), 0.5)
    for x in [0.3, 1.1, 2.9]:
        assert math.isclose(m.pdf(x), m.pdf(4.0 - x), rel_tol=1e-7)
        assert math.isclose(m.score(x), -m.score(4.0 - x), abs_tol=1e-7)


def test_far_tail_raises_underflow():
    with pytest.raises(TailUnderflowError) as info:
        smoothed_1d(LAPLACE, 0.5).score(np.array([0.0, 1e4]))
    assert info.value.point == 1e4


def test_score_points_back_toward_the_mode():
    m = smoothed_1d(LAPLACE, 0.5)
    x = np.array([-4.0, -1.0, -0.2, 0.2, 1.0, 4.0])
    np.testing.assert_array_equal(np.sign(m.score(x)), -np.sign(x))
    assert m.score(1.0) == pytest.approx(laplace_smoothed_score(1.0, 0.5), abs=1e-6)


@pytest.mark.parametrize("x", [62.0, 65.0, 80.0, 300.0, 680.0])
def test_laplace_far_tail_is_resolved(x):
    m = smoothed_1d(LAPLACE, 0.5)
    assert m.score(x) == pytest.approx(-1.0, abs=1e-6)
    assert m.score(-x) == pytest.approx(1.0, abs=1e-6)
    assert m.pdf(x) == pytest.approx(0.5 * math.exp(0.125 - x), rel=1e-6)


def test_laplace_underflow_starts_below_the_floor():
    with pytest.raises(TailUnderflowError) as info:
        smoothed_1d(LAPLACE, 0.5).score(710.0)
    assert info.value.point == 710.0


def test_gaussian_far_tail_raises_underflow():
    m = smoothed_1d(Gaussian(0.0, 1.0), 1.0)
    assert m.score(30.0) == pytest.approx(-15.0)
    with pytest.raises(TailUnderflowError) as info:
        m.score(np.array([1.0, -100.0]))
    assert info.value.point == -100.0


def test_invalid_construction():
    with pytest.raises(DomainError):
        SmoothedModel1d(LAPLACE, 0.0)
    with pytest.raises(ConfigurationError):
        Quadrature(nodes=8)


def test_smoothed_models_are_shared():
    assert smoothed_1d(LAPLACE, 0.5) is smoothed_1d(Laplace(0.0, 1.0), 0.5)


@pytest.mark.parametrize("base", BASES, ids=lambda b: b.to_spec())
@pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 2.0])
def test_mass_and_zero_mean_score(base, r):
    m = smoothed_1d(base, r)
    assert math.isclose(m.total_mass(), 1.0, abs_tol=1e-5)
    assert abs(m.score_mean()) < 1e-6


@pytest.mark.parametrize("base", BASES, ids=lambda b: b.to_spec())
@pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 2.0])
def test_fisher_sandwich(base, r):
    m = smoothed_1d(base, r)
    lower, upper = fisher_sandwich(m)
    assert lower - 1e-6 <= m.fisher <= upper + 1e-6


def test_laplace_fisher_range():
    fisher = fisher_1d(smoothed_1d(LAPLACE, 0.5))
    assert 1.0 / 2.25 <= fisher <= 4.0
    assert fisher_1d(smoothed_1d(LAPLACE, 0.1)) > fisher_1d(smoothed_1d(LAPLACE, 1.0))


@pytest.mark.parametrize("base", BASES, ids=lambda b: b.to_spec())
def test_fisher_is_non_increasing_in_radius(base):
    values = [smoothed_1d(base, r).fisher for r in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0]]
    assert all(b <= a + 1e-6 for a, b in zip(values, values[1:]))


def test_fisher_monte_carlo_agrees_with_quadrature():
    m = smoothed_1d(LAPLACE, 0.5)
    mean, se = m.fisher_monte_carlo(200_000, RngSeed(5))
    assert abs(mean - m.fisher) < 4 * se
    with pytest.raises(ConfigurationError):
        m.fisher_monte_carlo(999, RngSeed(5))


def test_expected_shifted_score_is_linear_for_gaussian():
    m = smoothed_1d(Gaussian(0.0, 1.0), 0.5)
    assert math.isclose(expected_shifted_score_1d(m, 0.1), -0.1 * 0.8, rel_tol=1e-8)


def test_hd_score_is_coordinatewise():
    m = SmoothedModelHd(DensityHd((Gaussian(0.0, 1.0),) * 8), 1.0)
    np.testing.assert_allclose(smoothed_score_hd(m, np.ones(8)), np.full(8, -0.5))
    lap = SmoothedModelHd(DensityHd((LAPLACE,) * 4), 0.5)
    x = np.array([1.0, 0.0, -1.0, 2.0])
    expected = [laplace_smoothed_score(v, 0.5) for v in x]
    np.testing.assert_allclose(lap.score(x), expected, atol=1e-6)
    assert np.all(np.abs(lap.score(np.zeros(4))) < 1e-10)


def test_hd_pdf_is_product_of_coordinates():
    base = DensityHd((LAPLACE, Gaussian(1.0, 2.0)))
    m = SmoothedModelHd(base, 0.5)
    x = np.array([0.4, -0.3])
    assert math.isclose(m.pdf(x), m.coords[0].pdf(0.4) * m.coords[1].pdf(-0.3), rel_tol=1e-12)


def test_hd_underflow_names_coordinate():
    m = SmoothedModelHd(DensityHd((Gaussian(0.0, 1.0), LAPLACE)), 0.5)
    with pytest.raises(TailUnderflowError) as info:
        m.score(np.array([0.0, 1e4]))
    assert info.value.coordinate == 1


def test_hd_fisher_quadrature():
    gauss = fisher_hd(SmoothedModelHd(DensityHd((Gaussian(0.0, 1.0),) * 8), 1.0))
    np.testing.assert_allclose(gauss.matrix, 0.5 * np.eye(8))
    assert gauss.relative_stderr == 0.0
    lap = fisher_hd(SmoothedModelHd(DensityHd((LAPLACE,) * 4), 0.5))
    np.testing.assert_allclose(np.diag(lap.matrix), smoothed_1d(LAPLACE, 0.5).fisher)
    assert lap.is_diagonal()
    np.testing.assert_allclose(lap.inverse() @ lap.matrix, np.eye(4), atol=1e-12)


def test_hd_fisher_monte_carlo_agrees_with_quadrature():
    m = SmoothedModelHd(DensityHd((LAPLACE, Gaussian(0.0, 2.0))), 0.5)
    mc = m.fisher("monte_carlo", seed=RngSeed(17), n=200_000)
    quad = m.fisher()
    assert np.all(np.abs(mc.matrix - quad.matrix) <= 4 * mc.stderr + 1e-12)
    assert np.array_equal(mc.matrix, mc.matrix.T)
    with pytest.raises(ConfigurationError):
        m.fisher("monte_carlo", n=10)


def test_fisher_lower_bound_holds_for_laplace_product():
    m = SmoothedModelHd(DensityHd((LAPLACE, Laplace(0.0, 2.0))), 0.5)
    for fisher in [m.fisher(), m.fisher("monte_carlo", seed=RngSeed(23), n=100_000)]:
        check = fisher_lower_bound_check(m, fisher)
        assert check["passed"]
        assert check["min_eigenvalue"] > 0


def test_fisher_matrix_inverse_floors_eigenvalues():
    fm = FisherMatrix(np.array([[1.0, 0.999], [0.999, 1.0]]), np.zeros((2, 2)), "monte_carlo", 0.01)
    vals = np.linalg.eigvalsh(fm.inverse())
    assert vals.max() <= 100.0 + 1e-9


def test_inversion_bias_vanishes_for_gaussian():
    m = SmoothedModelHd(DensityHd((Gaussian(0.0, 1.0),) * 3), 1.0)
    out = check_score_inversion_bias(m, np.array([0.2, -0.1, 0.3]))
    assert out["bias_norm"] < 1e-8
    zero = check_score_inversion_bias(m, np.zeros(3))
    assert zero["bias_norm"] == 0.0
    with pytest.raises(PreconditionError):
        check_score_inversion_bias(m, np.array([0.4, 0.4, 0.0]))


def bias_slope(base, r):
    m = SmoothedModelHd(DensityHd((base,)), r)
    scales = np.array([0.05, 0.1, 0.2])
    norms = [check_score_inversion_bias(m, np.array([s]))["bias_norm"] for s in scales]
    return np.polyfit(np.log(scales), np.log(norms), 1)[0]


def test_inversion_bias_is_quadratic_for_skewed_base():
    assert 1.6 <= bias_slope(ASYMMETRIC, 1.0) <= 2.6


def test_inversion_bias_is_at_least_quadratic_for_laplace():
    assert bias_slope(LAPLACE, 1.0) >= 1.6


def test_taylor_check():
    gauss = smoothed_1d(Gaussian(0.0, 1.0), 1.0)
    assert abs(expected_score_taylor_check(gauss, 0.3)["residual"]) < 1e-8
    assert abs(expected_score_taylor_check(gauss, 0.0)["lhs"]) < 1e-10
    lap = smoothed_1d(LAPLACE, 1.0)
    for eps in [0.05, 0.1, 0.2]:
        out = expected_score_taylor_check(lap, eps)
        assert math.isclose(out["linear"], lap.fisher * eps)
        assert abs(out["ratio"]) <= 10
    with pytest.raises(PreconditionError):
        expected_score_taylor_check(lap, 0.6)


def test_gaussian_fourth_moment():
    m = SmoothedModelHd(DensityHd((Gaussian(0.0, 1.0),) * 2), 1.0)
    out = score_moment_check(m, np.array([1.0, 0.0]), 4, 200_000, RngSeed(3))
    assert abs(out["moment"] - 0.75) < 4 * out["stderr"]
    assert math.isclose(out["ceiling"], 20.48)
    assert out["within"]


@pytest.mark.parametrize("k", [3, 4, 6])
@pytest.mark.parametrize("v", [(1.0, 0.0), (math.sqrt(0.5), math.sqrt(0.5))], ids=["axis", "diagonal"])
def test_laplace_moments_within_ceiling(k, v):
    m = SmoothedModelHd(DensityHd((LAPLACE,) * 2), 0.5)
    out = score_moment_check(m, np.array(v), k, 100_000, RngSeed(8 + k))
    assert out["within"]
    assert out["moment"] <= out["ceiling"]
    if k == 3:
        assert abs(out["signed_moment"]) < 4 * out["signed_stderr"]


def test_moment_check_preconditions():
    m = SmoothedModelHd(DensityHd((LAPLACE,) * 2), 0.5)
    with pytest.raises(PreconditionError):
        score_moment_check(m, np.array([1.0, 1.0]), 4, 10_000, RngSeed(0))
    with pytest.raises(PreconditionError):
        score_moment_check(m, np.array([1.0, 0.0]), 2, 10_000, RngSeed(0))
    with pytest.raises(PreconditionError):
        score_moment_check(m, np.array([1.0, 0.0]), 4, 9_999, RngSeed(0))
