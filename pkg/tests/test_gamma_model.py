import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gammafield.errors import DomainError, EvaluationError, IntegrabilityError, RankUndeterminedError
from gammafield.gamma_model import (GammaMarginal, SubordinatingFunction, bivariate_density_closed,
                                    bivariate_density_series, function_norm, laguerre_coeffs,
                                    laguerre_rank, pearson_functional)
from gammafield.specfun import gamma_density

GRID = np.linspace(0.1, 8.0, 5)


@pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("g", [0.1, 0.5, 0.9])
def test_closed_form_matches_long_series(beta, g):
    U, W = np.meshgrid(GRID, GRID)
    closed = bivariate_density_closed(U, W, g, beta)
    series = bivariate_density_series(U, W, g, beta, 600)
    assert np.max(np.abs(closed - series)) < 1e-10


def test_series_truncation_error_shrinks_geometrically():
    # remainder after n terms is O(g^n); 100 terms at g = 0.9 leave ~1e-5 near the origin
    c = bivariate_density_closed(0.1, 0.1, 0.9, 0.5)
    errs = [abs(bivariate_density_series(0.1, 0.1, 0.9, 0.5, n) - c) for n in (100, 200, 300)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[0] < 0.9 ** 100 * 10


def test_zero_correlation_factorizes():
    u, w = 1.3, 0.4
    assert bivariate_density_closed(u, w, 0.0, 2.0) == pytest.approx(
        gamma_density(u, 2.0) * gamma_density(w, 2.0), rel=1e-14)


@given(u=st.floats(0.05, 20), w=st.floats(0.05, 20), g=st.floats(0.0, 0.95), beta=st.floats(0.3, 5))
@settings(max_examples=60, deadline=None)
def test_closed_form_symmetric_and_positive(u, w, g, beta):
    a = bivariate_density_closed(u, w, g, beta)
    b = bivariate_density_closed(w, u, g, beta)
    assert a > 0
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("beta,g", [(1.0, 0.5), (2.5, 0.7)])
def test_marginal_and_mass(beta, g):
    u = 1.7
    marginal = integrate.quad(lambda w: bivariate_density_closed(u, w, g, beta), 0, np.inf, limit=200)[0]
    assert marginal == pytest.approx(gamma_density(u, beta), rel=1e-7)


def test_correlation_domain():
    with pytest.raises(DomainError):
        bivariate_density_closed(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        bivariate_density_closed(1.0, 1.0, -0.1, 1.0)
    with pytest.raises(DomainError):
        bivariate_density_closed(0.0, 1.0, 0.5, 1.0)


def test_pearson_functional():
    assert pearson_functional(0.5) == pytest.approx(1 / 3)
    # equals sum_k g^{2k}
    assert pearson_functional(0.3) == pytest.approx(sum(0.3 ** (2 * k) for k in range(1, 200)))
    with pytest.raises(DomainError):
        pearson_functional(1.0)


def test_coefficients_of_identity():
    c = laguerre_coeffs(lambda u: u, 2.0, 4)
    np.testing.assert_allclose(c, [2.0, -math.sqrt(2.0), 0, 0, 0], atol=1e-9)


def test_rank_two_polynomial():
    res = laguerre_rank(lambda u: u * u - 6 * u, 2.0)
    assert res.rank == 2
    assert abs(res.coeffs[1]) < 1e-8
    assert res.leading_coeff == pytest.approx(math.sqrt(12.0), rel=1e-9)


def test_square_rank_one_chi2_two_dof():
    # F(u) = u^2 with beta = 1: C0 = 2, C1 = -4, C2 = 2
    res = laguerre_rank(SubordinatingFunction(lambda u: u ** 2, "square"), 1.0)
    assert res.rank == 1
    np.testing.assert_allclose(res.coeffs[:4], [2, -4, 2, 0], atol=1e-9)


@pytest.mark.parametrize("beta", [0.5, 1.5])
def test_parseval_for_polynomials(beta):
    f = lambda u: 1 - 2 * u + 0.5 * u ** 3
    c = laguerre_coeffs(f, beta, 6)
    assert np.sum(c ** 2) == pytest.approx(function_norm(f, beta) ** 2, rel=1e-9)
    assert np.all(np.abs(c[4:]) < 1e-8)


def test_constant_has_no_rank():
    with pytest.raises(RankUndeterminedError) as info:
        laguerre_rank(lambda u: 3.0, 1.0, q_max=3)
    assert info.value.coeffs[0] == pytest.approx(3.0)


def test_non_square_integrable():
    with pytest.raises(IntegrabilityError):
        laguerre_coeffs(lambda u: u ** -0.5, 0.5, 2)


def test_non_finite_function():
    with pytest.raises(EvaluationError):
        laguerre_coeffs(lambda u: float("nan"), 1.0, 2)


def test_marginal_type():
    assert GammaMarginal(1.0).pdf(1.0) == pytest.approx(math.exp(-1))
    with pytest.raises(DomainError):
        GammaMarginal(-1.0)


@pytest.mark.parametrize("g", [5e-324, 1e-300, 1e-14, 1e-12])
def test_tiny_correlation_is_continuous(g):
    # small-argument branch joins the Bessel branch and the independent limit
    u, w, beta = 1.0, 0.5, 1.7
    indep = gamma_density(u, beta) * gamma_density(w, beta)
    assert bivariate_density_closed(u, w, g, beta) == pytest.approx(indep, rel=1e-10)
    assert bivariate_density_closed(u, w, g, beta) == pytest.approx(
        bivariate_density_series(u, w, g, beta, 5), rel=1e-12)


def test_small_argument_branch_matches_bessel_branch():
    # z crosses 1e-6 between these two correlations
    u, w, beta = 0.3, 0.2, 2.5
    for g in (1e-12, 1e-11):
        assert bivariate_density_closed(u, w, g, beta) == pytest.approx(
            bivariate_density_series(u, w, g, beta, 6), rel=1e-13)
