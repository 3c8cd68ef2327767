"""Tests for the quadratic-form series engine.

Oracles used here are independent of the series construction:

* equal weights collapse zeta to a scaled chi-squared with closed-form
  inverse moments 1/(lam (rho-1)) and 1/(lam^2 (rho-1)(rho-2));
* for arbitrary weights, E{1/zeta} = int_0^inf prod_j (1+lam_j t)^-1 dt and
  E{1/zeta^2} = int_0^inf t prod_j (1+lam_j t)^-1 dt (Laplace identities),
  evaluated by adaptive quadrature; for lam=[1,2,3] partial fractions give
  the exact values 1.5 ln3 - 2 ln2 and ln2 - 0.5 ln3;
* sampling zeta directly.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cfmimo.errors import DivergentMomentError
from cfmimo.quadform import (
    RubenSeries,
    _alpha_recursion,
    _alpha_recursion_log,
    _inv_moment_quadrature,
    cdf_zeta,
    choose_beta,
    expected_inv_zeta,
    expected_inv_zeta_sq,
    inv_zeta_mean,
    inv_zeta_sq_mean,
    pdf_zeta,
    ruben_coeffs,
)


def quad_inv_moment(lams, order):
    """Quadrature oracle for E{1/zeta^order}, order in {1, 2}."""
    lams = np.asarray(lams, dtype=float)

    def integrand(t):
        val = 1.0 / np.prod(1.0 + lams * t)
        return val * t if order == 2 else val

    val, err = integrate.quad(
        integrand, 0.0, np.inf, limit=500, epsabs=1e-14, epsrel=1e-13
    )
    assert err < 1e-10 * max(abs(val), 1e-12)
    return val


def test_equal_eigenvalues_collapse_to_single_term():
    s = ruben_coeffs([2.0, 2.0, 2.0])
    assert s.beta == pytest.approx(1.0)
    assert s.converged
    # all higher weights vanish identically
    assert abs(s.alpha[0] - 1.0) < 1e-15
    assert np.all(np.abs(s.alpha[1:]) == 0.0)
    assert expected_inv_zeta(s) == pytest.approx(0.25, rel=1e-12)
    assert expected_inv_zeta_sq(s) == pytest.approx(0.125, rel=1e-12)


@pytest.mark.parametrize("rho", range(3, 11))
def test_chi_squared_reductions(rho):
    lam = 0.7
    s = ruben_coeffs([lam] * rho)
    m1 = expected_inv_zeta(s)
    m2 = expected_inv_zeta_sq(s)
    assert abs(m1 - 1.0 / (lam * (rho - 1))) <= 1e-10 * m1
    assert abs(m2 - 1.0 / (lam**2 * (rho - 1) * (rho - 2))) <= 1e-10 * m2


def test_exact_laplace_values_for_1_2_3():
    s = ruben_coeffs([1.0, 2.0, 3.0])
    exact_m1 = 1.5 * np.log(3.0) - 2.0 * np.log(2.0)
    exact_m2 = np.log(2.0) - 0.5 * np.log(3.0)
    assert expected_inv_zeta(s) == pytest.approx(exact_m1, rel=1e-9)
    assert expected_inv_zeta_sq(s) == pytest.approx(exact_m2, rel=1e-9)


@pytest.mark.parametrize(
    "lams",
    [
        [1.0, 2.0, 3.0, 4.0],
        [0.5, 0.5, 4.0, 9.0],
        [0.1, 10.0, 10.0],  # forces the minimax beta fallback
        [3.0, 3.0, 3.0, 0.02, 7.0],
    ],
)
def test_quadrature_oracle_random_spectra(lams):
    s = ruben_coeffs(lams)
    assert s.converged
    assert expected_inv_zeta(s) == pytest.approx(quad_inv_moment(lams, 1), rel=1e-8)
    assert expected_inv_zeta_sq(s) == pytest.approx(quad_inv_moment(lams, 2), rel=1e-8)


def test_beta_fallback_keeps_series_convergent():
    lam = np.array([0.1, 10.0, 10.0])
    beta_h = lam.size / (2.0 * np.sum(1.0 / lam))
    # the harmonic-mean choice violates the decay bound here
    assert np.max(np.abs(1.0 - 2.0 * beta_h / lam)) > 1.0
    beta = choose_beta(lam)
    assert np.max(np.abs(1.0 - 2.0 * beta / lam)) < 1.0
    assert beta == pytest.approx(0.1 * 10.0 / 10.1)


def test_dispatched_moments_on_extreme_skew():
    # a line-of-sight-dominated port spectrum: spread ~5e5, where the
    # series would need millions of terms.  Expected values are the exact
    # partial-fraction forms for distinct eigenvalues,
    #   E{1/z}   =  sum_j (A_j / lam_j)   ln lam_j,
    #   E{1/z^2} = -sum_j (A_j / lam_j^2) ln lam_j,
    # with A_j = prod_{k != j} lam_j / (lam_j - lam_k), evaluated once and
    # frozen here (cross-checked against a 1e7-draw sample mean).
    lam = np.array([7.51372555e-08, 1.90144357e-11, 5.22264498e-12, 1.33617827e-13])
    assert inv_zeta_mean(lam) == pytest.approx(103587407.247739, rel=1e-9, abs=0.0)
    assert inv_zeta_sq_mean(lam) == pytest.approx(
        1.186558936703096e18, rel=1e-9, abs=0.0
    )


def test_dispatched_moments_rank_two_closed_form():
    # rank 2: E{1/z} = ln(l1/l2) / (l1 - l2), valid at any spread
    lam = np.array([1.0, 1e-9])
    expected = np.log(1.0 / 1e-9) / (1.0 - 1e-9)
    assert inv_zeta_mean(lam) == pytest.approx(expected, rel=1e-10, abs=0.0)


@settings(deadline=None, max_examples=40)
@given(
    st.lists(st.floats(0.2, 5.0), min_size=3, max_size=8).map(np.array)
)
def test_quadrature_and_series_agree_on_overlap(lams):
    # benign spectra are served by the series; the integral route must
    # reproduce it so the dispatch boundary cannot introduce a step
    s = ruben_coeffs(lams)
    assert s.converged
    assert _inv_moment_quadrature(lams, 1) == pytest.approx(
        expected_inv_zeta(s), rel=1e-8, abs=0.0
    )
    assert _inv_moment_quadrature(lams, 2) == pytest.approx(
        expected_inv_zeta_sq(s), rel=1e-8, abs=0.0
    )


def test_dispatched_moment_divergence_guards():
    with pytest.raises(DivergentMomentError):
        inv_zeta_mean(np.array([5.0]))
    with pytest.raises(DivergentMomentError):
        inv_zeta_sq_mean(np.array([1.0, 2.0]))


def test_pdf_matches_chi2_with_four_degrees():
    # lam = [2, 2] makes zeta a chi-squared with 4 degrees of freedom
    s = ruben_coeffs([2.0, 2.0])
    x = np.linspace(0.0, 20.0, 201)
    expected = x * np.exp(-x / 2.0) / 4.0
    assert np.max(np.abs(pdf_zeta(s, x) - expected)) < 1e-8


@pytest.mark.parametrize("lams", [[1.0, 2.0, 3.0], [0.1, 10.0, 10.0]])
def test_pdf_normalization(lams):
    s = ruben_coeffs(lams)
    total, err = integrate.quad(lambda x: pdf_zeta(s, x), 0.0, np.inf, limit=200)
    assert abs(total - 1.0) < 1e-6


def test_cdf_against_sampled_zeta():
    lams = np.array([1.0, 2.0, 3.0])
    rng = np.random.default_rng(20240811)
    n = 1_000_000
    zeta = rng.standard_exponential((n, lams.size)) @ lams
    zeta.sort()
    s = ruben_coeffs(lams)
    model = cdf_zeta(s, zeta)
    empirical_hi = np.arange(1, n + 1) / n
    empirical_lo = np.arange(0, n) / n
    ks = max(np.max(np.abs(empirical_hi - model)), np.max(np.abs(model - empirical_lo)))
    assert ks < 0.005


def test_normalization_partial_sum_reaches_one():
    s = ruben_coeffs([0.5, 1.0, 6.0, 2.0])
    assert s.converged
    assert s.normalization == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    lams=st.lists(st.floats(0.05, 50.0), min_size=3, max_size=8),
    scale=st.floats(0.01, 100.0),
)
def test_scale_covariance(lams, scale):
    s1 = ruben_coeffs(lams)
    s2 = ruben_coeffs(np.asarray(lams) * scale)
    m1a, m1b = expected_inv_zeta(s1), expected_inv_zeta(s2)
    assert m1b == pytest.approx(m1a / scale, rel=1e-7)
    m2a, m2b = expected_inv_zeta_sq(s1), expected_inv_zeta_sq(s2)
    assert m2b == pytest.approx(m2a / scale**2, rel=1e-7)


def test_divergent_moments_raise():
    with pytest.raises(DivergentMomentError):
        expected_inv_zeta(ruben_coeffs([3.0]))
    with pytest.raises(DivergentMomentError):
        expected_inv_zeta_sq(ruben_coeffs([3.0, 1.0]))
    # rank 2 still has a finite first inverse moment
    assert expected_inv_zeta(ruben_coeffs([3.0, 1.0])) > 0.0


def test_input_validation():
    with pytest.raises(ValueError):
        ruben_coeffs([])
    with pytest.raises(ValueError):
        ruben_coeffs([1.0, -2.0])
    with pytest.raises(ValueError):
        ruben_coeffs([1.0, np.inf])
    with pytest.raises(ValueError):
        ruben_coeffs([1.0, 4.0], beta=4.0)  # inadmissible explicit scale


def test_truncation_flag_reports_term_cap():
    s = ruben_coeffs([0.1, 10.0, 10.0], max_terms=5)
    assert not s.converged
    assert s.n_terms == 5


def test_log_domain_recursion_matches_float_path():
    lam = np.array([0.5, 1.5, 2.5, 8.0])
    beta = choose_beta(lam)
    c = 1.0 - 2.0 * beta / lam
    alpha0 = float(np.prod(2.0 * beta / lam))
    a_f, conv_f, overflow = _alpha_recursion(c, alpha0, 400, 1e-12)
    assert conv_f and not overflow
    a_l, conv_l = _alpha_recursion_log(c, np.log(alpha0), 400, 1e-12)
    assert conv_l
    n = min(a_f.size, a_l.size)
    assert np.allclose(a_f[:n], a_l[:n], rtol=1e-12, atol=1e-15)
