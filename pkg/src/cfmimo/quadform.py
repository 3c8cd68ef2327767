"""Moments and density of positive quadratic forms in complex Gaussian vectors.

Everything here concerns the scalar

    zeta = sum_j lam_j * |g_j|^2,      g_j iid CN(0, 1),  lam_j > 0,

i.e. a positively weighted sum of rho independent unit-mean exponentials.
Its density admits a gamma-mixture power series

    f(x) = sum_k alpha_k * x^(rho+k-1) exp(-x/(2 beta))
                 / (Gamma(rho+k) * (2 beta)^(rho+k)),

where beta is a free positive scale and the mixture weights alpha_k follow a
two-term recursion.  The series and the inverse-moment sums derived from it
(E{1/zeta}, E{1/zeta^2}) drive both the precoder normalization and the
closed-form interference terms of the rate engine.

The weights satisfy sum_k alpha_k = 1 for any admissible beta; admissible
means max_j |1 - 2 beta / lam_j| < 1, which makes the weight stream decay
geometrically.  The conventional beta = rho / (2 sum_j 1/lam_j) can violate
that bound for spread spectra, so `choose_beta` falls back to the minimax
scale beta* = lam_min*lam_max / (lam_min + lam_max), for which the ratio is
(lam_max - lam_min) / (lam_max + lam_min) < 1 always.

For heavily spread spectra even the minimax ratio sits at 1 - O(lam_min /
lam_max) and the series needs millions of terms, which is where selected
port powers actually live (a line-of-sight port can carry 10^5 times the
energy of its neighbours).  The inverse moments then come from the exact
Laplace-transform integrals

    E{1/zeta}   = int_0^inf prod_j (1 + lam_j t)^{-1} dt,
    E{1/zeta^2} = int_0^inf  t * prod_j (1 + lam_j t)^{-1} dt,

evaluated by adaptive quadrature on two compact pieces.  Both routes agree
on their overlap; `expected_inv_zeta` and friends stay series-based for
callers that already hold a RubenSeries, while the `inv_zeta_mean` /
`inv_zeta_sq_mean` entry points dispatch on the spectrum's spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.integrate import quad

from cfmimo.errors import DivergentMomentError

# Stop once this many consecutive weights fall below the tail tolerance; a
# single small alpha_k can be a sign change rather than actual decay.
_CONSECUTIVE_SMALL = 4

# Use the conventional harmonic-mean scale only while its decay ratio stays
# comfortably below 1; beyond this the minimax scale converges much faster.
_BETA_RATIO_CUTOFF = 0.98


@dataclass(frozen=True)
class RubenSeries:
    """Gamma-mixture representation of the density of zeta.

    lambdas: the rho positive weights of the quadratic form.
    beta:    gamma scale parameter over 2 (the mixture uses scale 2*beta).
    alpha:   mixture weights alpha_0..alpha_{n-1}; they sum to ~1.
    converged: the tail dropped below the tolerance before the term cap.
    """

    lambdas: np.ndarray
    beta: float
    alpha: np.ndarray
    converged: bool

    @property
    def rho(self) -> int:
        return int(self.lambdas.size)

    @property
    def n_terms(self) -> int:
        return int(self.alpha.size)

    @property
    def normalization(self) -> float:
        """Partial sum of the mixture weights; 1 at convergence."""
        return float(self.alpha.sum())


def harmonic_decay_ratio(lambdas: np.ndarray) -> float:
    """Series decay ratio max_j |1 - 2 beta_H / lam_j| of the harmonic scale."""
    lam = np.asarray(lambdas, dtype=float)
    beta_h = lam.size / (2.0 * np.sum(1.0 / lam))
    return float(np.max(np.abs(1.0 - 2.0 * beta_h / lam)))


def choose_beta(lambdas: np.ndarray) -> float:
    """Pick the gamma scale for the series.

    Prefers beta = rho / (2 sum 1/lam) (exact single-term collapse for equal
    weights); switches to the minimax beta* when the decay ratio of the
    conventional choice exceeds _BETA_RATIO_CUTOFF.  The series value is
    independent of beta, so this only affects conditioning and term count.
    """
    lam = np.asarray(lambdas, dtype=float)
    if harmonic_decay_ratio(lam) <= _BETA_RATIO_CUTOFF:
        return float(lam.size / (2.0 * np.sum(1.0 / lam)))
    lam_min, lam_max = float(lam.min()), float(lam.max())
    return lam_min * lam_max / (lam_min + lam_max)


def _alpha_recursion(c: np.ndarray, alpha0: float, max_terms: int, tail_tol: float):
    """Run the weight recursion in plain float64.

    alpha_k = (1/2k) * sum_{r<k} b_{k-r} alpha_r with b_k = 2 sum_j c_j^k.
    Returns (alpha array, converged flag, overflowed flag).
    """
    alpha = np.empty(max_terms)
    alpha[0] = alpha0
    # b[k] for k = 1.. computed incrementally: c_pow holds c^k
    b = np.empty(max_terms)
    c_pow = np.ones_like(c)
    partial = alpha0
    small_run = 0
    n = 1
    for k in range(1, max_terms):
        c_pow *= c
        b[k] = 2.0 * c_pow.sum()
        # dot of b[1..k] reversed against alpha[0..k-1]
        a_k = 0.5 / k * np.dot(b[1 : k + 1][::-1], alpha[:k])
        if not np.isfinite(a_k) or abs(a_k) > 1e300:
            return alpha[:k], False, True
        alpha[k] = a_k
        partial += a_k
        n = k + 1
        if abs(a_k) < tail_tol * max(1.0, abs(partial)):
            small_run += 1
            if small_run >= _CONSECUTIVE_SMALL:
                return alpha[:n], True, False
        else:
            small_run = 0
    return alpha[:n], False, False


def _alpha_recursion_log(c: np.ndarray, log_alpha0: float, max_terms: int, tail_tol: float):
    """Sign/log-magnitude variant of the weight recursion.

    Same recurrence evaluated with log|alpha_k| and separate signs so that
    intermediate magnitudes beyond float range cannot overflow.  Where both
    paths are representable they agree to ~1e-12 relative.
    """
    log_a = np.full(max_terms, -np.inf)
    sign_a = np.zeros(max_terms)
    log_a[0] = log_alpha0
    sign_a[0] = 1.0
    log_b = np.full(max_terms, -np.inf)
    sign_b = np.zeros(max_terms)
    c_pow = np.ones_like(c)
    small_run = 0
    n = 1
    # running partial sum of alpha in linear space, clipped into float range
    partial = np.exp(min(log_alpha0, 700.0))
    for k in range(1, max_terms):
        c_pow *= c
        s = 2.0 * c_pow.sum()
        log_b[k] = np.log(abs(s)) if s != 0.0 else -np.inf
        sign_b[k] = np.sign(s)
        terms = log_b[1 : k + 1][::-1] + log_a[:k]
        signs = sign_b[1 : k + 1][::-1] * sign_a[:k]
        m = terms.max()
        if m == -np.inf:
            acc = 0.0
        else:
            acc = float(np.sum(signs * np.exp(terms - m)))
        if acc == 0.0:
            log_a[k] = -np.inf
            sign_a[k] = 0.0
        else:
            log_a[k] = m + np.log(abs(acc)) - np.log(2.0 * k)
            sign_a[k] = np.sign(acc)
        n = k + 1
        a_lin = sign_a[k] * np.exp(min(log_a[k], 700.0))
        partial += a_lin
        if abs(a_lin) < tail_tol * max(1.0, abs(partial)):
            small_run += 1
            if small_run >= _CONSECUTIVE_SMALL:
                break
        else:
            small_run = 0
    converged = small_run >= _CONSECUTIVE_SMALL
    with np.errstate(over="ignore"):
        alpha = sign_a[:n] * np.exp(log_a[:n])
    return alpha, converged


def ruben_coeffs(
    lambdas,
    max_terms: int = 5000,
    tail_tol: float = 1e-12,
    beta: float | None = None,
) -> RubenSeries:
    """Build the gamma-mixture weights for the density of zeta.

    lambdas must be strictly positive (callers drop numerically-zero
    eigenvalues first; they do not contribute to zeta).  Truncation stops at
    the first run of weights below tail_tol relative to the partial sum, or
    at max_terms, whichever happens first; `converged` records which.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lam.size == 0:
        raise ValueError("empty eigenvalue list")
    if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
        raise ValueError("quadratic-form eigenvalues must be positive and finite")
    if beta is None:
        beta = choose_beta(lam)
    beta = float(beta)
    c = 1.0 - 2.0 * beta / lam
    ratio = float(np.max(np.abs(c)))
    if ratio >= 1.0:
        raise ValueError(
            f"series scale beta={beta:g} does not converge for this spectrum "
            f"(decay ratio {ratio:g} >= 1)"
        )
    alpha0 = float(np.prod(2.0 * beta / lam))
    if alpha0 == 0.0 or not np.isfinite(alpha0):
        log_alpha0 = float(np.sum(np.log(2.0 * beta / lam)))
        alpha, converged = _alpha_recursion_log(c, log_alpha0, max_terms, tail_tol)
        return RubenSeries(lambdas=lam, beta=beta, alpha=alpha, converged=converged)
    alpha, converged, overflow = _alpha_recursion(c, alpha0, max_terms, tail_tol)
    if overflow:
        log_alpha0 = float(np.sum(np.log(2.0 * beta / lam)))
        alpha, converged = _alpha_recursion_log(c, log_alpha0, max_terms, tail_tol)
    return RubenSeries(lambdas=lam, beta=beta, alpha=alpha, converged=converged)


def expected_inv_zeta(series: RubenSeries) -> float:
    """E{1/zeta} = sum_k alpha_k / (2 beta (rho + k - 1)); needs rho > 1."""
    rho = series.rho
    if rho <= 1:
        raise DivergentMomentError("E{1/zeta} diverges for a rank-1 quadratic form")
    k = np.arange(series.n_terms)
    return float(np.sum(series.alpha / (2.0 * series.beta * (rho + k - 1.0))))


def expected_inv_zeta_sq(series: RubenSeries) -> float:
    """E{1/zeta^2} = sum_k alpha_k / ((2 beta)^2 (rho+k-1)(rho+k-2)); rho > 2."""
    rho = series.rho
    if rho <= 2:
        raise DivergentMomentError(
            "E{1/zeta^2} diverges for a quadratic form of rank <= 2"
        )
    k = np.arange(series.n_terms)
    denom = (2.0 * series.beta) ** 2 * (rho + k - 1.0) * (rho + k - 2.0)
    return float(np.sum(series.alpha / denom))


def _inv_moment_quadrature(lam: np.ndarray, order: int) -> float:
    """E{1/zeta^order} by quadrature of the Laplace-transform integral.

    The integral int_0^inf t^(order-1) prod_j (1 + lam_j t)^{-1} dt is
    split at the knee t = 1/lam_max and both halves are mapped onto the
    unit interval; the tail piece substitutes u = 1/(lam_max t), which
    turns the integrand into u^(rho-1-order) prod_j (u + lam_j')^{-1} with
    lam_j' = lam_j / lam_max.  Everything runs on the normalized spectrum
    and the scale is restored at the end.
    """
    rho = lam.size
    scale = float(lam.max())
    nl = lam / scale

    def head(t: float) -> float:
        base = -float(np.sum(np.log1p(nl * t)))
        if order == 2:
            base += np.log(t)
        return float(np.exp(base))

    p = rho - 1 - order

    def tail(u: float) -> float:
        base = -float(np.sum(np.log(u + nl)))
        if p != 0:
            base += p * np.log(u)
        return float(np.exp(base))

    i_head, _ = quad(head, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=500)
    i_tail, _ = quad(tail, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=500)
    return (i_head + i_tail) / scale ** order


def inv_zeta_mean(lambdas: np.ndarray) -> float:
    """E{1/zeta} for the positive spectrum lambdas; needs rank > 1.

    Uses the gamma-mixture series when its harmonic scale converges
    quickly, otherwise the exact integral; the two agree on the overlap.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lam.size <= 1:
        raise DivergentMomentError("E{1/zeta} diverges for a rank-1 quadratic form")
    if harmonic_decay_ratio(lam) <= _BETA_RATIO_CUTOFF:
        series = ruben_coeffs(lam)
        if series.converged:
            return expected_inv_zeta(series)
    return _inv_moment_quadrature(lam, order=1)


def inv_zeta_sq_mean(lambdas: np.ndarray) -> float:
    """E{1/zeta^2} for the positive spectrum lambdas; needs rank > 2."""
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lam.size <= 2:
        raise DivergentMomentError(
            "E{1/zeta^2} diverges for a quadratic form of rank <= 2"
        )
    if harmonic_decay_ratio(lam) <= _BETA_RATIO_CUTOFF:
        series = ruben_coeffs(lam)
        if series.converged:
            return expected_inv_zeta_sq(series)
    return _inv_moment_quadrature(lam, order=2)


def pdf_zeta(series: RubenSeries, x) -> np.ndarray:
    """Density of zeta evaluated at x >= 0 (vectorized)."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xv < 0.0):
        raise ValueError("density support is x >= 0")
    theta = 2.0 * series.beta
    rho = series.rho
    a = rho + np.arange(series.n_terms)  # gamma shapes, one per term
    out = np.zeros_like(xv)
    pos = xv > 0.0
    if np.any(pos):
        lx = np.log(xv[pos])
        # log gamma pdf per (term, x); modest sizes, dense is fine
        logpdf = (
            (a - 1.0)[:, None] * lx[None, :]
            - xv[pos][None, :] / theta
            - special.gammaln(a)[:, None]
            - (a * np.log(theta))[:, None]
        )
        out[pos] = series.alpha @ np.exp(logpdf)
    if np.any(~pos):
        # x = 0: only a rho=1, k=0 term has mass there
        out[~pos] = series.alpha[0] / theta if rho == 1 else 0.0
    if np.isscalar(x) or np.ndim(x) == 0:
        return out[0]
    return out


def cdf_zeta(series: RubenSeries, x) -> np.ndarray:
    """Distribution function of zeta via regularized lower incomplete gammas."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    theta = 2.0 * series.beta
    a = series.rho + np.arange(series.n_terms)
    vals = special.gammainc(a[:, None], np.clip(xv, 0.0, None)[None, :] / theta)
    out = series.alpha @ vals
    if np.isscalar(x) or np.ndim(x) == 0:
        return out[0]
    return out
