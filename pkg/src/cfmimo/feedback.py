"""Eigen-domain feedback compression and the scalar quantizer.

Selected-port estimates are statistically redundant whenever the selected
ports are correlated, so the feedback link carries transform coefficients
instead: with R_sel = U S U^H (compact, positive eigenvalues only) the
sender reports r = S^{-1/2} U^H h and the receiver rebuilds U S^{1/2} r.
Estimates drawn from CN(0, c * R_sel) lie in the range of R_sel, which
makes the rank-based codec lossless while dropping one coefficient per
fully dependent port pair.

Each complex coefficient costs bits_amp + bits_phase feedback bits, so a
K-port selection costs 7K raw bits and 7r after compression with the
default 4 + 3 split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cfmimo.errors import ConfigError


@dataclass(frozen=True)
class EdtCodec:
    """Compact eigen-transform of one user's selected-port correlation."""

    basis: np.ndarray     # (K, r) eigenvectors kept
    scales: np.ndarray    # (r,) positive eigenvalues kept

    @property
    def n_ports(self) -> int:
        return self.basis.shape[0]

    @property
    def n_coeff(self) -> int:
        return self.basis.shape[1]

    def compress(self, coeff_sel: np.ndarray) -> np.ndarray:
        """Map (n, K) selected-port vectors to (n, r) transform coefficients."""
        return (coeff_sel @ self.basis.conj()) / np.sqrt(self.scales)

    def reconstruct(self, transformed: np.ndarray) -> np.ndarray:
        """Inverse map, (n, r) back to (n, K)."""
        return (transformed * np.sqrt(self.scales)) @ self.basis.T


def build_codec(r_sel: np.ndarray, mode: str = "rank",
                rank_tol: float = 1e-10) -> EdtCodec:
    """Construct the transform for one selection.

    mode "rank" keeps every eigenvalue above rank_tol times the largest
    (lossless on in-range inputs); mode "fixed" keeps the top ceil(3K/4)
    positive eigenvalues, trading reconstruction error for fewer
    coefficients.
    """
    r_sel = np.asarray(r_sel)
    k = r_sel.shape[0]
    if r_sel.shape != (k, k):
        raise ConfigError(f"r_sel must be square, got {r_sel.shape}")
    evals, evecs = np.linalg.eigh(r_sel)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    positive = evals > rank_tol * max(evals[0], 0.0)
    if mode == "rank":
        keep = positive
    elif mode == "fixed":
        budget = math.ceil(3 * k / 4)
        keep = np.zeros(k, dtype=bool)
        keep[:budget] = True
        keep &= positive
    else:
        raise ConfigError(f"unknown codec mode {mode!r}")
    if not keep.any():
        raise ConfigError("selected-port correlation has no positive eigenvalues")
    return EdtCodec(basis=evecs[:, keep], scales=evals[keep])


def quantize_scalar(values: np.ndarray, bits_amp: int = 4,
                    bits_phase: int = 3) -> np.ndarray:
    """Polar quantizer for unit-variance complex coefficients.

    Amplitude: uniform over [0, 4] (four standard deviations), values above
    clip to the top cell; reconstruction at cell midpoints.  Phase:
    mid-rise uniform over [0, 2 pi).
    """
    values = np.asarray(values)
    n_amp = 2 ** bits_amp
    n_phase = 2 ** bits_phase
    step_amp = 4.0 / n_amp
    step_phase = 2.0 * np.pi / n_phase
    amp_idx = np.clip(np.floor(np.abs(values) / step_amp), 0, n_amp - 1)
    phase_idx = np.floor(np.mod(np.angle(values), 2.0 * np.pi) / step_phase) % n_phase
    amp = (amp_idx + 0.5) * step_amp
    phase = (phase_idx + 0.5) * step_phase
    return amp * np.exp(1j * phase)


def measure_quantizer_noise(bits_amp: int = 4, bits_phase: int = 3,
                            n: int = 100_000, seed: int = 0) -> float:
    """Empirical error variance of the quantizer on CN(0, 1) inputs.

    The value is a per-coefficient variance, so it can stand in for the
    quantization part of the selected-port error level.
    """
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.5)
    q = quantize_scalar(z, bits_amp=bits_amp, bits_phase=bits_phase)
    return float(np.mean(np.abs(z - q) ** 2))


_BITS_PER_COEFF = 7  # 4 amplitude + 3 phase bits


def feedback_bits(n_coeff: int, bits_per_coeff: int = _BITS_PER_COEFF) -> int:
    return bits_per_coeff * n_coeff


def compression_ratio(port_counts, coeff_counts,
                      bits_per_coeff: int = _BITS_PER_COEFF) -> float:
    """Compressed-to-raw feedback cost over all users: sum 7 r_u / sum 7 K_u."""
    raw = sum(feedback_bits(k, bits_per_coeff) for k in port_counts)
    packed = sum(feedback_bits(r, bits_per_coeff) for r in coeff_counts)
    if raw == 0:
        raise ConfigError("cannot form a compression ratio with no ports selected")
    return packed / raw
