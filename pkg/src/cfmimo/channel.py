"""Fast-fading sampler and beamspace-to-antenna mapping.

The beamspace (port-domain) vector of a user stacks all BSs: entry
(b-1)*M + m-1 is port m at BS b.  The antenna-domain channel at one BS is
sqrt(M) * F * diag(sqrt(beta)) * hbar_b with F the unitary M-point DFT.
Estimates live on the selected ports only and share the generative pair
construction: hbar = sqrt(1 - eps2) x + eps y with x, y independent draws
from the port correlation, and the estimate keeps only the x part on the
selected ports, so estimate and estimation error are exactly independent.
"""

from __future__ import annotations

import numpy as np

from cfmimo.ports import PortSelection
from cfmimo.scenario import ScenarioStatistics


def dft_matrix(n: int) -> np.ndarray:
    """Unitary n-point DFT matrix, entry (a, m) = exp(-2j pi a m / n) / sqrt(n)."""
    a = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(a, a) / n) / np.sqrt(n)


def sample_correlated(stats: ScenarioStatistics, u: int, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """n independent draws from CN(0, R_u), shape (n, B*M)."""
    dim = stats.dim
    w = (rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim)))
    w *= np.sqrt(0.5)
    return w @ stats.R_sqrt(u).T


def sample_true_and_estimated(
    stats: ScenarioStatistics,
    selection: PortSelection,
    eps2: float,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Draw n fading realizations for every user.

    Returns (hbar, est) where hbar has shape (n, U, B*M) and est[u] holds
    the estimated coefficients on user u's selected ports, shape (n, K_u).
    With eps2 = 0 the estimate equals the true coefficients on those ports.
    """
    if not 0.0 <= eps2 < 1.0:
        raise ValueError("eps2 must lie in [0, 1)")
    n_users = stats.config.n_users
    hbar = np.empty((n, n_users, stats.dim), dtype=complex)
    est: list[np.ndarray] = []
    for u in range(n_users):
        x = sample_correlated(stats, u, n, rng)
        if eps2 > 0.0:
            y = sample_correlated(stats, u, n, rng)
            hbar[:, u, :] = np.sqrt(1.0 - eps2) * x + np.sqrt(eps2) * y
        else:
            hbar[:, u, :] = x
        est.append(np.sqrt(1.0 - eps2) * x[:, selection.flat_index(u)])
    return hbar, est


def assemble_antenna_channel(beta_row: np.ndarray, hbar_slice: np.ndarray,
                             dft: np.ndarray) -> np.ndarray:
    """Antenna-domain channel at one BS: sqrt(M) F diag(sqrt(beta)) hbar.

    beta_row has shape (M,), hbar_slice (..., M); broadcasting applies the
    same mapping to every realization.
    """
    n_ports = beta_row.shape[0]
    scaled = hbar_slice * np.sqrt(beta_row)
    return np.sqrt(n_ports) * (scaled @ dft.T)


def antenna_stack(stats: ScenarioStatistics, hbar: np.ndarray) -> np.ndarray:
    """Map stacked beamspace realizations (n, U, B*M) to antenna domain."""
    n_bs, _, n_ports = stats.beta.shape
    dft = dft_matrix(n_ports)
    out = np.empty_like(hbar)
    for u in range(hbar.shape[1]):
        for b in range(n_bs):
            sl = slice(b * n_ports, (b + 1) * n_ports)
            out[:, u, sl] = assemble_antenna_channel(
                stats.beta[b, u], hbar[:, u, sl], dft
            )
    return out


def estimate_to_antenna(
    stats: ScenarioStatistics,
    selection: PortSelection,
    u: int,
    coeff_sel: np.ndarray,
) -> np.ndarray:
    """Antenna-domain channel rebuilt from selected-port coefficients.

    coeff_sel has shape (n, K_u); unselected ports are taken as zero, which
    is exactly what the transmitter knows after feedback.
    """
    n_bs, _, n_ports = stats.beta.shape
    full = np.zeros((coeff_sel.shape[0], stats.dim), dtype=complex)
    full[:, selection.flat_index(u)] = coeff_sel
    dft = dft_matrix(n_ports)
    out = np.empty_like(full)
    for b in range(n_bs):
        sl = slice(b * n_ports, (b + 1) * n_ports)
        out[:, sl] = assemble_antenna_channel(stats.beta[b, u], full[:, sl], dft)
    return out
