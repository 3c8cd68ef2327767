"""Closed-form downlink rate under zero-forcing with selected-port CSI.

With disjoint per-BS selections the ZF Gram matrix is diagonal and the
per-user normalization reduces to a positive quadratic form zeta_u in the
estimated coefficients, whose eigen-spectrum drives everything: the power
normalization needs E{1/zeta}, the interference terms need E{zeta^2} and
E{1/zeta^2}.  The first and last come from the weighted-chi-squared series
in cfmimo.quadform; E{zeta^2} is (tr S)^2 + ||S||_F^2 with S the quadratic
form matrix.

Interference is evaluated two ways.  The cheap route splits each user
pair into a same-BS part, carried by a cross matrix S_uv, and a cross-BS
part driven by inter-BS port correlation, carried by a separate correction
delta_uv; ratios of dependent quadratic forms are replaced by ratios and
products of their means.  That decoupling is what the selection search
scores millions of candidates with, but its bias grows as the per-user
port budget shrinks (the self term in the uncorrelated equal-power case
comes out (K-1)/(K+1) of the truth for K selected ports), which is far too
coarse for comparing against simulation.  The report path therefore
computes each pair term exactly: conditioned on the precoder draw, the
disturbance a user sees is Gaussian with known covariance, so
E{|h~_u^H w_v|^2} collapses to E{x^H B x / (x^H G x)^2} with both matrices
fixed, and that is a weighted sum of inverse-square moments of the
precoder form with one eigenvalue duplicated -- the same integrals
cfmimo.quadform already provides.  The Monte Carlo path in cfmimo.linksim
is the reference both routes are validated against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfmimo.errors import DivergentMomentError
from cfmimo.ports import PortSelection
from cfmimo.quadform import (
    RubenSeries,
    inv_zeta_mean,
    inv_zeta_sq_mean,
    ruben_coeffs,
)
from cfmimo.scenario import ScenarioStatistics

RANK_TOL = 1e-10


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    return 0.5 * (root + root.conj().T)


@dataclass
class QuadFormSpec:
    """Spectrum and moments of one user's normalization form zeta."""

    matrix: np.ndarray    # K x K, PSD
    lambdas: np.ndarray   # positive eigenvalues, descending
    _series: RubenSeries | None = field(default=None, repr=False)
    _inv1: float | None = field(default=None, repr=False)
    _inv2: float | None = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.lambdas.size

    @property
    def mean(self) -> float:
        """E{zeta} = sum of eigenvalues."""
        return float(self.lambdas.sum())

    @property
    def mean_sq(self) -> float:
        """E{zeta^2} = (tr S)^2 + ||S||_F^2."""
        return float(self.lambdas.sum() ** 2 + (self.lambdas ** 2).sum())

    def series(self) -> RubenSeries:
        if self._series is None:
            if self.rank == 0:
                raise DivergentMomentError("quadratic form is identically zero")
            self._series = ruben_coeffs(self.lambdas)
        return self._series

    def inv_mean(self) -> float:
        """E{1/zeta}; needs rank > 1."""
        if self._inv1 is None:
            self._inv1 = inv_zeta_mean(self.lambdas)
        return self._inv1

    def inv_mean_sq(self) -> float:
        """E{1/zeta^2}; needs rank > 2."""
        if self._inv2 is None:
            self._inv2 = inv_zeta_sq_mean(self.lambdas)
        return self._inv2


def build_S_u(r_sel: np.ndarray, beta_sel: np.ndarray, eps2: float,
              rank_tol: float = RANK_TOL) -> QuadFormSpec:
    """Quadratic form matrix (1 - eps2) R^{1/2} diag(beta) R^{1/2}.

    The spectrum is taken from the matrix itself (Hermitian eigensolve);
    eigenvalues below rank_tol times the largest count as zero.
    """
    root = _psd_sqrt(np.asarray(r_sel, dtype=float))
    mat = (1.0 - eps2) * (root * beta_sel) @ root
    mat = 0.5 * (mat + mat.T)
    evals = np.linalg.eigvalsh(mat)[::-1]
    top = max(evals[0], 0.0) if evals.size else 0.0
    lambdas = evals[evals > rank_tol * top] if top > 0.0 else evals[:0]
    return QuadFormSpec(matrix=mat, lambdas=np.ascontiguousarray(lambdas))


def build_S_uv(r_sel_v: np.ndarray, beta_v: np.ndarray, beta_u_on_v: np.ndarray,
               r_bar: np.ndarray, eps2: float) -> np.ndarray:
    """Cross matrix R_v^{1/2} D_u Rbar D_v R_v^{1/2} scaled by (1 - eps2).

    beta_* are average port powers on user v's selected ports; r_bar is
    eps2 * R_sel of user u when u = v (self term through the estimation
    error) and the identity otherwise.
    """
    root = _psd_sqrt(np.asarray(r_sel_v, dtype=float))
    inner = (beta_u_on_v[:, None] * r_bar) * beta_v[None, :]
    mat = (1.0 - eps2) * root @ inner @ root
    return 0.5 * (mat + mat.T)


def delta_uv(selection: PortSelection, beta: np.ndarray, big_r: np.ndarray,
             eps2: float, u: int, v: int) -> float:
    """Cross-BS interference correction.

    Sums over port pairs of user v's selection living at different BSs.
    For u = v the pair is weighted by eps2 (1 - eps2) and the squared
    correlation of user u between the two stack positions; for u != v by
    (1 - eps2), the product of both users' correlations there, and the
    geometric mean of the four port powers involved.  The M^2 prefactor
    keeps the value on the same scale as the squared Gram entries.
    """
    n_ports = selection.n_ports
    idx = selection.flat_index(v)
    bs_of = idx // n_ports
    cross = bs_of[:, None] != bs_of[None, :]
    if not cross.any():
        return 0.0
    scale = float(n_ports) ** 2
    if u == v:
        b_sel = selection.beta_selected(beta, v)
        r_uu = big_r[u][np.ix_(idx, idx)]
        weight = eps2 * (1.0 - eps2)
        total = b_sel @ (np.where(cross, r_uu, 0.0) ** 2) @ b_sel
        return scale * weight * float(total)
    # both users' port powers are read on user v's selected stack positions
    b_u_on_v = beta[:, u, :].reshape(-1)[idx]
    b_v_on_v = beta[:, v, :].reshape(-1)[idx]
    g = np.sqrt(b_u_on_v * b_v_on_v)
    r_u = big_r[u][np.ix_(idx, idx)]
    r_v = big_r[v][np.ix_(idx, idx)]
    total = g @ np.where(cross, r_u * r_v, 0.0) @ g
    return scale * (1.0 - eps2) * float(total)


@dataclass
class RateReport:
    """Per-user link budget, shared by the analytic and Monte Carlo paths."""

    signal: np.ndarray        # effective received signal power
    interference: np.ndarray  # total interference power
    noise: float
    sinr: np.ndarray
    rate: np.ndarray          # bits/s/Hz

    @classmethod
    def from_components(cls, signal, interference, noise: float) -> "RateReport":
        signal = np.asarray(signal, dtype=float)
        interference = np.asarray(interference, dtype=float)
        sinr = signal / (interference + noise)
        return cls(
            signal=signal,
            interference=interference,
            noise=float(noise),
            sinr=sinr,
            rate=np.log2(1.0 + sinr),
        )

    @property
    def sum_rate(self) -> float:
        return float(self.rate.sum())

    def csv_columns(self, prefix: str = "") -> list[str]:
        """Column names for the one-row CSV form, per-user fields numbered."""
        cols = []
        for name in ("signal", "interference", "sinr", "rate"):
            cols.extend(f"{prefix}{name}_{u + 1}" for u in range(len(self.rate)))
        cols.append(f"{prefix}noise")
        cols.append(f"{prefix}sum_rate")
        return cols

    def csv_values(self) -> list[str]:
        """Values matching csv_columns, formatted for exact float round-trip."""
        vals = []
        for name in ("signal", "interference", "sinr", "rate"):
            vals.extend(repr(float(x)) for x in getattr(self, name))
        vals.append(repr(float(self.noise)))
        vals.append(repr(float(self.sum_rate)))
        return vals


class RateModel:
    """Analytic rate evaluation for one (scenario, selection, eps2) triple.

    Per-user spectra, series moments and pairwise terms are cached, so
    evaluating all users costs one eigensolve per user plus one small
    matrix product per user pair.
    """

    def __init__(self, stats: ScenarioStatistics, selection: PortSelection,
                 eps2: float):
        selection.validate()
        if selection.n_users != stats.config.n_users:
            raise ValueError("selection and scenario disagree on user count")
        self.stats = stats
        self.selection = selection
        self.eps2 = float(eps2)
        self._quad: dict[int, QuadFormSpec] = {}
        self._eta: dict[int, float] = {}
        self._cross: dict[tuple[int, int], float] = {}
        self._delta: dict[tuple[int, int], float] = {}
        self._basis: dict[int, tuple] = {}
        self._pair: dict[tuple[int, int], float] = {}

    def r_selected(self, u: int) -> np.ndarray:
        return self.selection.restrict_matrix(self.stats.R[u], u)

    def quadform(self, u: int) -> QuadFormSpec:
        if u not in self._quad:
            self._quad[u] = build_S_u(
                self.r_selected(u),
                self.selection.beta_selected(self.stats.beta, u),
                self.eps2,
            )
        return self._quad[u]

    def mu(self, u: int) -> float:
        """E{1/zeta_u}; so E{|w_u|^2} = mu / M."""
        return self.quadform(u).inv_mean()

    def eta(self, v: int) -> float:
        """E{1/zeta_v^2} / M^2, evaluated lazily (needs rank > 2)."""
        if v not in self._eta:
            m2 = float(self.stats.config.n_ports) ** 2
            self._eta[v] = self.quadform(v).inv_mean_sq() / m2
        return self._eta[v]

    def cross_trace(self, u: int, v: int) -> float:
        if (u, v) not in self._cross:
            idx_v = self.selection.flat_index(v)
            beta_v = self.selection.beta_selected(self.stats.beta, v)
            beta_u_on_v = self.stats.beta[:, u, :].reshape(-1)[idx_v]
            if u == v:
                r_bar = self.eps2 * self.r_selected(v)
            else:
                r_bar = np.eye(idx_v.size)
            mat = build_S_uv(self.r_selected(v), beta_v, beta_u_on_v,
                             r_bar, self.eps2)
            self._cross[(u, v)] = float(np.trace(mat))
        return self._cross[(u, v)]

    def delta(self, u: int, v: int) -> float:
        if (u, v) not in self._delta:
            self._delta[(u, v)] = delta_uv(
                self.selection, self.stats.beta, self.stats.R, self.eps2, u, v
            )
        return self._delta[(u, v)]

    def interference_factor(self, u: int, v: int) -> float:
        """Decoupled approximation of E{|residual_u^H w_v|^2}.

        Cheap enough for the selection search's inner loop; biased low
        for small port budgets (see the module docstring).  pair_gain is
        the exact counterpart in the same units.
        """
        spec_v = self.quadform(v)
        term = self.cross_trace(u, v) / spec_v.mean_sq
        d = self.delta(u, v)
        if d != 0.0:
            term += d * self.eta(v)
        return term

    def _precoder_basis(self, v: int) -> tuple:
        """Eigenbasis of zeta_v as a form in white coordinates.

        With port coefficients R_sel^{1/2} x, x ~ CN(0, I), the squared
        norm of the reconstructed channel is x^H G x with
        G = M (1 - eps2) R^{1/2} diag(beta) R^{1/2}.  Returns the
        eigenvalues (zeros dropped), eigenvectors, keep mask and R^{1/2}.
        """
        if v not in self._basis:
            m = float(self.stats.config.n_ports)
            beta_v = self.selection.beta_selected(self.stats.beta, v)
            root = _psd_sqrt(self.r_selected(v))
            g = m * (1.0 - self.eps2) * (root * beta_v) @ root
            g = 0.5 * (g + g.T)
            lam, vec = np.linalg.eigh(g)
            top = float(lam[-1]) if lam.size else 0.0
            if top <= 0.0:
                raise DivergentMomentError(
                    f"user {v}: selected ports carry no channel energy"
                )
            keep = lam > RANK_TOL * top
            self._basis[v] = (lam, vec, keep, lam[keep], root)
        return self._basis[v]

    def pair_gain(self, u: int, v: int) -> float:
        """Exact E{|h~_u^H w_v|^2} (unit-power precoder).

        h~_u is the estimation residual for u = v and the full channel of
        user u for u != v; either way it is independent of w_v with a
        known covariance on v's selected ports, so the expectation reduces
        to E{x^H B x / (x^H G x)^2}.  Expanding B in G's eigenbasis turns
        that into sum_i B_ii E{1/zeta_i^2} where zeta_i has G's spectrum
        with lambda_i duplicated (dropped-direction weights multiply the
        plain inverse-square moment instead).  Needs two surviving
        dimensions beyond the duplicate; thinner selections genuinely
        diverge and raise DivergentMomentError.
        """
        key = (u, v)
        if key not in self._pair:
            self._pair[key] = self._pair_gain(u, v)
        return self._pair[key]

    def _pair_gain(self, u: int, v: int) -> float:
        eps2 = self.eps2
        if u == v and eps2 == 0.0:
            return 0.0
        idx = self.selection.flat_index(v)
        if idx.size == 0:
            return 0.0
        m = float(self.stats.config.n_ports)
        lam, vec, keep, lam_kept, root = self._precoder_basis(v)
        beta_v = self.selection.beta_selected(self.stats.beta, v)
        r_u_blk = self.stats.R[u][np.ix_(idx, idx)]
        if u == v:
            beta_u = beta_v
            scale = eps2
        else:
            beta_u = self.stats.beta[:, u, :].reshape(-1)[idx]
            scale = 1.0
        g_u = np.sqrt(beta_u * beta_v)
        inner = (g_u[:, None] * r_u_blk) * g_u[None, :]
        b = (m * m * scale * (1.0 - eps2)) * (root @ inner @ root)
        weights = np.real(np.einsum("ij,ij->j", vec.conj(), b @ vec))
        w_top = float(weights.max(initial=0.0))
        if w_top <= 0.0:
            return 0.0
        cut = RANK_TOL * w_top
        total = 0.0
        for i in range(lam.size):
            if weights[i] <= cut:
                continue
            spec = np.append(lam_kept, lam[i]) if keep[i] else lam_kept
            total += weights[i] * inv_zeta_sq_mean(spec)
        return total

    def user_rate(self, u: int, p_user: np.ndarray, sigma_n2: float,
                  exact: bool = True) -> float:
        """Rate of user u in bits/s/Hz.

        exact picks the pair-term route: the conditioned expectation by
        default, the decoupled approximation with exact=False (what the
        selection search scores with).  Raises DivergentMomentError when
        any active user's form has too little rank for the moments
        involved; callers that scan many candidate selections treat that
        as an invalid candidate.
        """
        p_user = np.asarray(p_user, dtype=float)
        if p_user[u] == 0.0:
            return 0.0
        m = float(self.stats.config.n_ports)
        factor = self.pair_gain if exact else self.interference_factor
        denom = sigma_n2 / m
        for v in range(self.selection.n_users):
            if p_user[v] == 0.0:
                continue
            denom += (p_user[v] / self.mu(v)) * factor(u, v)
        sinr = (p_user[u] / self.mu(u)) / denom
        return float(np.log2(1.0 + sinr))

    def report(self, p_user: np.ndarray, sigma_n2: float,
               exact: bool = True) -> RateReport:
        """Link budget with powers on the Monte Carlo scale.

        Signal is M P_u / mu_u and interference M (P_v / mu_v) times the
        pair term, so columns line up with the simulated report.
        """
        p_user = np.asarray(p_user, dtype=float)
        n_users = self.selection.n_users
        m = float(self.stats.config.n_ports)
        factor = self.pair_gain if exact else self.interference_factor
        signal = np.zeros(n_users)
        interference = np.zeros(n_users)
        for u in range(n_users):
            if p_user[u] == 0.0:
                continue
            signal[u] = m * p_user[u] / self.mu(u)
            for v in range(n_users):
                if p_user[v] == 0.0:
                    continue
                interference[u] += (
                    m * (p_user[v] / self.mu(v)) * factor(u, v)
                )
        return RateReport.from_components(signal, interference, sigma_n2)

    def sum_rate(self, p_user: np.ndarray, sigma_n2: float,
                 exact: bool = True) -> float:
        return sum(
            self.user_rate(u, p_user, sigma_n2, exact=exact)
            for u in range(self.selection.n_users)
        )


def user_rate(stats: ScenarioStatistics, selection: PortSelection, eps2: float,
              p_user: np.ndarray, sigma_n2: float, u: int,
              exact: bool = True) -> float:
    """One-shot wrapper around RateModel for a single user."""
    return RateModel(stats, selection, eps2).user_rate(u, p_user, sigma_n2,
                                                       exact=exact)
