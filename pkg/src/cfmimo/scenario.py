"""Scenario geometry and second-order channel statistics.

Builds everything the simulator needs to know about a drop before any fast
fading is sampled: BS and user positions, distance-based link gains, the
beamspace power profile of each link (a Laplacian-shaped window around the
line-of-sight port), and the stacked per-user port correlation matrix.

Conventions used throughout the package:
  * ports are indexed 1..M (matching the delimited outputs), arrays holding
    port indices carry that 1-based convention explicitly;
  * per-user stacked vectors run over BSs first (b = 1..B), ports ascending
    within each BS, so entry (b-1)*M + m-1 is port m at BS b.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cfmimo.config import ExperimentConfig, SystemConfig, config_header_lines
from cfmimo.errors import ConfigError, StatisticsError

_PLACEMENT_RETRIES = 100


def bs_positions(n_bs: int, d_bs: float) -> np.ndarray:
    """BS coordinates, shape (B, 2).

    A single BS sits at the origin.  For B >= 2 the sites form a regular
    polygon with side length d_bs, i.e. circumradius d_bs / (2 sin(pi/B)),
    starting at angle -pi/6.
    """
    if n_bs == 1:
        return np.zeros((1, 2))
    radius = d_bs / (2.0 * math.sin(math.pi / n_bs))
    angles = -math.pi / 6.0 + 2.0 * math.pi * np.arange(n_bs) / n_bs
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def cluster_centers(n_bs: int, d_bs: float) -> np.ndarray:
    """User cluster centers, shape (2B, 2): B cell-interior ones, then B
    cell-edge ones closer to the array barycenter."""
    angles = 2.0 * math.pi * np.arange(n_bs) / n_bs
    intra_ang = angles - math.pi / 6.0
    edge_ang = angles + math.pi / 6.0
    intra = (d_bs / 2.0) * np.stack([np.cos(intra_ang), np.sin(intra_ang)], axis=1)
    edge = (d_bs / 8.0) * np.stack([np.cos(edge_ang), np.sin(edge_ang)], axis=1)
    return np.concatenate([intra, edge], axis=0)


def place_users(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Drop each user uniformly on a disk of radius r0 around its cluster
    center (user u uses center (u-1) mod 2B).  Positions that coincide with
    a BS are redrawn; persistent coincidence is an error."""
    bs = bs_positions(cfg.n_bs, cfg.d_bs)
    centers = cluster_centers(cfg.n_bs, cfg.d_bs)
    pos = np.empty((cfg.n_users, 2))
    for u in range(cfg.n_users):
        center = centers[u % len(centers)]
        for _ in range(_PLACEMENT_RETRIES):
            rad = cfg.r0 * math.sqrt(rng.uniform())
            phi = 2.0 * math.pi * rng.uniform()
            cand = center + rad * np.array([math.cos(phi), math.sin(phi)])
            if np.linalg.norm(bs - cand, axis=1).min() > 0.0:
                pos[u] = cand
                break
        else:
            raise StatisticsError(
                f"user {u + 1} landed on a BS in {_PLACEMENT_RETRIES} "
                "consecutive draws; increase r0 or move the cluster"
            )
    return pos


def path_loss_db(f0_ghz: float, distance_m) -> np.ndarray:
    """Distance-dependent average link gain in dB (a negative number)."""
    distance_m = np.asarray(distance_m, dtype=float)
    if f0_ghz <= 0.0 or np.any(distance_m <= 0.0):
        raise ConfigError("path loss needs positive frequency and distance")
    return -28.0 - 20.0 * np.log10(f0_ghz) - 22.0 * np.log10(distance_m)


def port_angles(n_ports: int) -> np.ndarray:
    """Beam grid angles theta_m = arcsin(2(m-1)/M - 1), m = 1..M."""
    return np.arcsin(2.0 * np.arange(n_ports) / n_ports - 1.0)


def los_port_index(bs_xy: np.ndarray, user_xy: np.ndarray, n_ports: int) -> int:
    """1-based index of the beam whose direction best matches the user.

    Angles are measured against the array broadside, which points from the
    BS toward the origin (a lone BS at the origin uses broadside angle 0).
    """
    delta = np.asarray(user_xy, dtype=float) - np.asarray(bs_xy, dtype=float)
    bearing = math.atan2(delta[1], delta[0])
    if np.allclose(bs_xy, 0.0):
        broadside = 0.0
    else:
        broadside = math.atan2(-bs_xy[1], -bs_xy[0])
    rel = (bearing - broadside + math.pi) % (2.0 * math.pi) - math.pi
    grid = 2.0 * np.arange(n_ports) / n_ports - 1.0
    return int(np.argmin(np.abs(grid - math.sin(rel)))) + 1


def port_window(los_port: int, eff_ports: int, n_ports: int) -> np.ndarray:
    """Contiguous 1-based window of eff_ports ports centered on the LoS
    port (one extra below when the count is even), shifted inward at the
    grid edges."""
    if not 1 <= los_port <= n_ports:
        raise ConfigError(f"los_port {los_port} outside 1..{n_ports}")
    if not 1 <= eff_ports <= n_ports:
        raise ConfigError(f"eff_ports {eff_ports} outside 1..{n_ports}")
    lo = los_port - math.ceil((eff_ports - 1) / 2)
    hi = los_port + math.floor((eff_ports - 1) / 2)
    if lo < 1:
        hi += 1 - lo
        lo = 1
    if hi > n_ports:
        lo -= hi - n_ports
        hi = n_ports
    return np.arange(lo, hi + 1)


def port_power_profile(
    link_gain: float,
    los_port: int,
    eff_ports: int,
    as_deg: float,
    n_ports: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Average beamspace power per port for one link.

    Ports inside the window get a Laplacian-shaped weight
    exp(-sqrt(2) |theta_m - theta_los| / sigma) with sigma the angular
    spread in radians, renormalized so the profile sums to link_gain;
    everything outside the window is exactly zero.

    Returns (profile over all M ports, 1-based window indices).
    """
    if link_gain <= 0.0:
        raise ConfigError("link_gain must be positive")
    if as_deg <= 0.0:
        raise ConfigError("as_deg must be positive")
    window = port_window(los_port, eff_ports, n_ports)
    theta = port_angles(n_ports)
    theta_los = theta[los_port - 1]
    sigma = math.radians(as_deg)
    weights = np.exp(-math.sqrt(2.0) * np.abs(theta[window - 1] - theta_los) / sigma)
    profile = np.zeros(n_ports)
    profile[window - 1] = weights * (link_gain / weights.sum())
    return profile, window


def build_port_correlation(
    cfg: SystemConfig, windows: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Per-user stacked port correlation matrices, shape (U, B*M, B*M).

    Within a BS, effective ports l and l' of the same user correlate as
    rho_s ** |l - l'|.  Across BSs, the i-th effective ports (in ascending
    port order) of the two windows correlate by rho_c for the first
    coupled_ports positions.  Rows and columns of never-used ports are
    identically zero.

    Eigenvalues of each effective sub-block are checked: anything below
    -max(1e-10, 1e-8 * lambda_max) means the requested correlation pattern
    is not a valid covariance and raises StatisticsError; small negative
    dust is clipped to zero and the matrix rebuilt from the clipped
    spectrum.

    Returns (R, eff_idx, evals, evecs) with the last three per-user lists
    over the effective index set only.
    """
    n_bs, n_users, n_ports = cfg.n_bs, cfg.n_users, cfg.n_ports
    dim = n_bs * n_ports
    big_r = np.zeros((n_users, dim, dim))
    eff_idx: list[np.ndarray] = []
    evals: list[np.ndarray] = []
    evecs: list[np.ndarray] = []
    worst = []

    for u in range(n_users):
        r_u = np.zeros((dim, dim))
        for b in range(n_bs):
            ports = windows[b, u]
            idx = (b * n_ports) + ports - 1
            dist = np.abs(ports[:, None] - ports[None, :])
            r_u[np.ix_(idx, idx)] = cfg.rho_s ** dist
        for b in range(n_bs):
            for b2 in range(b + 1, n_bs):
                for i in range(cfg.coupled_ports):
                    p = b * n_ports + windows[b, u][i] - 1
                    q = b2 * n_ports + windows[b2, u][i] - 1
                    r_u[p, q] = cfg.rho_c
                    r_u[q, p] = cfg.rho_c

        idx_u = np.sort(
            np.concatenate([(b * n_ports) + windows[b, u] - 1 for b in range(n_bs)])
        )
        sub = r_u[np.ix_(idx_u, idx_u)]
        w, v = np.linalg.eigh(sub)
        lam_max = max(w[-1], 0.0)
        if w[0] < -max(1e-10, 1e-8 * lam_max):
            worst.append(w[0])
            continue
        w = np.clip(w, 0.0, None)
        sub = (v * w) @ v.T
        sub = 0.5 * (sub + sub.T)
        r_u[np.ix_(idx_u, idx_u)] = sub
        big_r[u] = r_u
        eff_idx.append(idx_u)
        evals.append(w)
        evecs.append(v)

    if worst:
        raise StatisticsError(
            "requested port correlation is not positive semidefinite "
            f"(most negative eigenvalue {min(worst):.6e}); reduce rho_s, "
            "rho_c or coupled_ports"
        )
    return big_r, eff_idx, evals, evecs


@dataclass
class ScenarioStatistics:
    """Everything known about a drop before fast fading is sampled."""

    config: SystemConfig
    bs_pos: np.ndarray        # (B, 2)
    user_pos: np.ndarray      # (U, 2)
    dist: np.ndarray          # (B, U)
    link_gain: np.ndarray     # (B, U), linear
    los_port: np.ndarray      # (B, U), 1-based
    window: np.ndarray        # (B, U, L), 1-based ascending
    beta: np.ndarray          # (B, U, M), average port powers
    R: np.ndarray             # (U, B*M, B*M)
    eff_idx: list             # per-user 0-based effective indices in the stack
    R_evals: list             # eigenvalues of the effective sub-block
    R_evecs: list
    p_tx: float               # per-BS transmit power budget, linear
    p_user: np.ndarray        # (U,), per-user power share
    _sqrt_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.config.n_bs * self.config.n_ports

    def beta_stack(self, u: int) -> np.ndarray:
        """Port powers of user u stacked over BSs, shape (B*M,)."""
        return self.beta[:, u, :].reshape(-1)

    def R_sqrt(self, u: int) -> np.ndarray:
        """Symmetric PSD square root of the stacked correlation matrix."""
        if u not in self._sqrt_cache:
            root = np.zeros((self.dim, self.dim))
            v = self.R_evecs[u]
            s = (v * np.sqrt(self.R_evals[u])) @ v.T
            root[np.ix_(self.eff_idx[u], self.eff_idx[u])] = 0.5 * (s + s.T)
            self._sqrt_cache[u] = root
        return self._sqrt_cache[u]


def snr_to_power(cfg: SystemConfig, link_gain: np.ndarray) -> tuple[float, np.ndarray]:
    """Transmit power that realizes cfg.snr_db on the weakest link, and the
    equal per-user split of it."""
    beta_min = float(link_gain.min())
    p_tx = 10.0 ** (cfg.snr_db / 10.0) * cfg.sigma_n2 / beta_min
    return p_tx, np.full(cfg.n_users, p_tx / cfg.n_users)


def make_scenario(
    cfg: SystemConfig,
    rng: np.random.Generator | None = None,
    user_pos: np.ndarray | None = None,
) -> ScenarioStatistics:
    """Draw one drop and assemble its full second-order description.

    `user_pos` overrides the random placement (useful for reproducing a
    specific geometry); it must keep every user strictly off the BS sites.
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    bs = bs_positions(cfg.n_bs, cfg.d_bs)
    if user_pos is None:
        users = place_users(cfg, rng)
    else:
        users = np.asarray(user_pos, dtype=float).reshape(cfg.n_users, 2)
    dist = np.linalg.norm(bs[:, None, :] - users[None, :, :], axis=2)
    if np.any(dist <= 0.0):
        raise StatisticsError("a user position coincides with a BS site")

    link_gain = 10.0 ** (path_loss_db(cfg.f0_ghz, dist) / 10.0)
    los = np.empty((cfg.n_bs, cfg.n_users), dtype=int)
    window = np.empty((cfg.n_bs, cfg.n_users, cfg.eff_ports), dtype=int)
    beta = np.zeros((cfg.n_bs, cfg.n_users, cfg.n_ports))
    for b in range(cfg.n_bs):
        for u in range(cfg.n_users):
            los[b, u] = los_port_index(bs[b], users[u], cfg.n_ports)
            beta[b, u], window[b, u] = port_power_profile(
                link_gain[b, u], los[b, u], cfg.eff_ports, cfg.as_deg, cfg.n_ports
            )

    big_r, eff_idx, evals, evecs = build_port_correlation(cfg, window)
    p_tx, p_user = snr_to_power(cfg, link_gain)
    return ScenarioStatistics(
        config=cfg,
        bs_pos=bs,
        user_pos=users,
        dist=dist,
        link_gain=link_gain,
        los_port=los,
        window=window,
        beta=beta,
        R=big_r,
        eff_idx=eff_idx,
        R_evals=evals,
        R_evecs=evecs,
        p_tx=p_tx,
        p_user=p_user,
    )


def dump_scenario(stats: ScenarioStatistics, csv_path: str | Path,
                  cfg: ExperimentConfig | None = None) -> None:
    """Write the port power table as CSV plus a JSON sidecar holding the
    correlation matrices (entries as [real, imag] pairs)."""
    csv_path = Path(csv_path)
    lines = []
    if cfg is not None:
        lines.extend(config_header_lines(cfg, extra={"format_version": 1}))
    else:
        lines.append("# format_version = 1")
    lines.append("bs,user,port,beta")
    n_bs, n_users, n_ports = stats.beta.shape
    for b in range(n_bs):
        for u in range(n_users):
            for m in range(n_ports):
                lines.append(f"{b + 1},{u + 1},{m + 1},{stats.beta[b, u, m]!r}")
    csv_path.write_text("\n".join(lines) + "\n")

    sidecar = csv_path.with_name(csv_path.stem + "_R.json")
    payload = {
        "format_version": 1,
        "n_users": n_users,
        "dim": stats.dim,
        "R": [
            [[[float(x), 0.0] for x in row] for row in stats.R[u]]
            for u in range(n_users)
        ],
    }
    sidecar.write_text(json.dumps(payload))
