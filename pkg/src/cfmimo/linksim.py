"""Monte Carlo reference simulation of the ZF downlink.

This path makes none of the analytic approximations: it draws fading,
builds the precoder from the fed-back estimates, and averages the actual
normalization and interference powers.  It is the oracle the closed-form
rate is validated against, so it must stay free of any quantity computed
by cfmimo.rate.

Realizations are processed in fixed-size chunks; each chunk gets its own
child generator, so results are reproducible for a given generator state
and chunk size regardless of how callers schedule the surrounding sweep.
"""

from __future__ import annotations

import math

import numpy as np

from cfmimo.channel import antenna_stack, estimate_to_antenna, sample_true_and_estimated
from cfmimo.errors import PrecoderError, SimulationError
from cfmimo.feedback import build_codec, quantize_scalar
from cfmimo.ports import PortSelection
from cfmimo.rate import RateReport
from cfmimo.scenario import ScenarioStatistics

CHUNK_SIZE = 20_000
_REJECT_EIG_TOL = 1e-12
_REJECT_BUDGET = 0.01


def zf_precoder(h_hat: np.ndarray, p_user=None, norm_expectations=None) -> np.ndarray:
    """Zero-forcing directions W = H (H^H H)^{-1} for a batch of channels.

    h_hat has shape (n, U, dim) with one row per user; the result has shape
    (n, dim, U).  When both p_user and norm_expectations (E{|w_u|^2}) are
    given, column u is scaled by sqrt(P_u / E{|w_u|^2}).
    """
    gram = np.einsum("nud,nvd->nuv", h_hat.conj(), h_hat)
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise PrecoderError("singular ZF Gram matrix") from exc
    w = np.einsum("nud,nuv->ndv", h_hat, inv)
    if p_user is not None and norm_expectations is not None:
        w = w * np.sqrt(np.asarray(p_user) / np.asarray(norm_expectations))
    return w


def gram_offdiagonal(h_hat: np.ndarray) -> float:
    """Largest off-diagonal Gram magnitude relative to the diagonal."""
    gram = np.einsum("nud,nvd->nuv", h_hat.conj(), h_hat)
    n_users = gram.shape[1]
    diag = np.abs(np.einsum("nuu->nu", gram))
    worst = 0.0
    for u in range(n_users):
        for v in range(u + 1, n_users):
            rel = np.abs(gram[:, u, v]) / np.sqrt(diag[:, u] * diag[:, v])
            worst = max(worst, float(rel.max()))
    return worst


def _draw_chunk(stats, selection, eps2, n, rng, codecs):
    hbar, est = sample_true_and_estimated(stats, selection, eps2, n, rng)
    h_true = antenna_stack(stats, hbar)
    h_hat = np.empty_like(h_true)
    for u in range(stats.config.n_users):
        coeff = est[u]
        if codecs is not None:
            coeff = codecs[u].reconstruct(quantize_scalar(codecs[u].compress(coeff)))
        h_hat[:, u, :] = estimate_to_antenna(stats, selection, u, coeff)
    return h_true, h_hat


def _rejected(h_hat: np.ndarray) -> np.ndarray:
    gram = np.einsum("nud,nvd->nuv", h_hat.conj(), h_hat).real
    evals = np.linalg.eigvalsh(gram)
    top = np.einsum("nuu->nu", gram).max(axis=1)
    return evals[:, 0] <= _REJECT_EIG_TOL * top


def monte_carlo_rate(
    stats: ScenarioStatistics,
    selection: PortSelection,
    eps2: float,
    p_user: np.ndarray,
    sigma_n2: float,
    n_real: int,
    rng: np.random.Generator,
    chunk_size: int = CHUNK_SIZE,
    quantized: bool = False,
    codec_mode: str = "rank",
) -> RateReport:
    """Simulated per-user link budget over n_real fading realizations.

    By default the CSI error is injected statistically through eps2 (pass
    the total error level).  With quantized=True, eps2 should carry only
    the estimation part: estimates then run through the eigen-domain codec
    (codec_mode "rank" keeps every significant eigen-direction, "fixed"
    truncates to the fixed budget) and the explicit scalar quantizer
    before precoding.

    Realizations whose Gram matrix is numerically singular are redrawn;
    more than 1% of them aborts the run, since that signals a degenerate
    selection rather than bad luck.
    """
    selection.validate()
    p_user = np.asarray(p_user, dtype=float)
    n_users = stats.config.n_users
    codecs = None
    if quantized:
        codecs = [
            build_codec(selection.restrict_matrix(stats.R[u], u),
                        mode=codec_mode)
            for u in range(n_users)
        ]

    n_chunks = math.ceil(n_real / chunk_size)
    child = rng.spawn(n_chunks)
    sum_wnorm = np.zeros(n_users)
    sum_inter = np.zeros((n_users, n_users))
    rejected_total = 0
    reject_limit = max(1, int(_REJECT_BUDGET * n_real))

    for c in range(n_chunks):
        n = min(chunk_size, n_real - c * chunk_size)
        crng = child[c]
        h_true, h_hat = _draw_chunk(stats, selection, eps2, n, crng, codecs)
        while True:
            bad = _rejected(h_hat)
            n_bad = int(bad.sum())
            if n_bad == 0:
                break
            rejected_total += n_bad
            if rejected_total > reject_limit:
                raise SimulationError(
                    f"rejected {rejected_total} realizations (limit "
                    f"{reject_limit}); the selection leaves some user "
                    "with a numerically empty channel"
                )
            t_new, h_new = _draw_chunk(stats, selection, eps2, n_bad, crng, codecs)
            h_true[bad] = t_new
            h_hat[bad] = h_new
        w = zf_precoder(h_hat)
        sum_wnorm += np.sum(np.abs(w) ** 2, axis=(0, 1))
        resid = h_true - h_hat
        cross = np.einsum("nud,ndv->nuv", resid.conj(), w)
        sum_inter += np.sum(np.abs(cross) ** 2, axis=0)

    e_wnorm = sum_wnorm / n_real
    e_inter = sum_inter / n_real
    signal = np.where(p_user > 0.0, p_user / e_wnorm, 0.0)
    interference = e_inter @ (p_user / e_wnorm)
    return RateReport.from_components(signal, interference, sigma_n2)
