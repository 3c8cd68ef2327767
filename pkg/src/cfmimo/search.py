"""Port selection: greedy multi-round search, baseline, exhaustive oracle.

All three optimize (or evaluate) the same analytic sum rate.  Because a
candidate differs from its neighbor in one user's ports at one BS, the
evaluator memoizes every per-user and per-pair term by the port tuples it
actually depends on; a swap then costs one new eigensolve instead of a
full rebuild.  The memoized evaluation is checked against the plain
RateModel in the tests, so the cache cannot drift from the reference
formula.

Selections whose rate moments diverge (effective rank too small) are kept
out of the way by scoring them at -inf rather than raising, so the search
simply never picks them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from cfmimo.config import SystemConfig
from cfmimo.errors import ConfigError, DivergentMomentError, FeasibilityError
from cfmimo.ports import PortSelection
from cfmimo.rate import build_S_u, build_S_uv, delta_uv
from cfmimo.scenario import ScenarioStatistics


def equal_split_counts(ports_per_user: int, cfg: SystemConfig) -> np.ndarray:
    """Per-(BS, user) port counts for an evenly split per-user budget."""
    if ports_per_user % cfg.n_bs != 0:
        raise ConfigError(
            f"ports_per_user = {ports_per_user} does not split evenly over "
            f"{cfg.n_bs} BSs; pass explicit counts instead"
        )
    per_bs = ports_per_user // cfg.n_bs
    counts = np.full((cfg.n_bs, cfg.n_users), per_bs, dtype=int)
    _check_feasible(counts, cfg.n_ports)
    return counts


def _check_feasible(counts: np.ndarray, n_ports: int) -> None:
    counts = np.asarray(counts)
    if counts.min() < 0:
        raise FeasibilityError("negative port count")
    load = counts.sum(axis=1)
    if load.max() > n_ports:
        b = int(load.argmax())
        raise FeasibilityError(
            f"BS {b + 1} would need {load[b]} ports but has {n_ports}"
        )


def init_sequential_strongest(
    stats: ScenarioStatistics,
    counts: np.ndarray,
    user_order=None,
) -> PortSelection:
    """Each user in turn takes its strongest remaining ports at every BS.

    Strength is the average port power; ties go to the lower port index.
    The default order is user 1..U, which is exactly the MM-S baseline.
    """
    counts = np.asarray(counts, dtype=int)
    cfg = stats.config
    _check_feasible(counts, cfg.n_ports)
    if user_order is None:
        user_order = range(cfg.n_users)
    assignments = [[() for _ in range(cfg.n_bs)] for _ in range(cfg.n_users)]
    for b in range(cfg.n_bs):
        taken = np.zeros(cfg.n_ports, dtype=bool)
        for u in user_order:
            need = counts[b, u]
            if need == 0:
                continue
            # stable sort on descending power keeps lowest index among ties
            order = np.argsort(-stats.beta[b, u, :], kind="stable")
            picked = [int(m) + 1 for m in order if not taken[m]][:need]
            if len(picked) < need:
                raise FeasibilityError(
                    f"BS {b + 1} ran out of ports for user {u + 1}"
                )
            taken[np.array(picked) - 1] = True
            assignments[u][b] = tuple(sorted(picked))
    return PortSelection.from_lists(cfg.n_bs, cfg.n_ports, assignments)


def mm_s_baseline(stats: ScenarioStatistics, counts: np.ndarray) -> PortSelection:
    """Strongest-average-power assignment in fixed user order, no refinement."""
    return init_sequential_strongest(stats, counts, user_order=None)


class SelectionEvaluator:
    """Sum-rate evaluation memoized over the port tuples terms depend on.

    Safe across any number of candidate selections for one fixed
    (scenario, eps2, powers, noise) tuple.  Divergent-moment candidates
    evaluate to -inf.
    """

    def __init__(self, stats: ScenarioStatistics, eps2: float,
                 p_user: np.ndarray, sigma_n2: float):
        self.stats = stats
        self.eps2 = float(eps2)
        self.p_user = np.asarray(p_user, dtype=float)
        self.sigma_n2 = float(sigma_n2)
        self._mu: dict = {}
        self._mean_sq: dict = {}
        self._eta: dict = {}
        self._cross: dict = {}
        self._delta: dict = {}
        self._beta_flat = [
            stats.beta[:, u, :].reshape(-1) for u in range(stats.config.n_users)
        ]

    def _flat_idx(self, sets_u) -> np.ndarray:
        m = self.stats.config.n_ports
        return np.array(
            [b * m + p - 1 for b, ports in enumerate(sets_u) for p in ports],
            dtype=int,
        )

    def _own_terms(self, u: int, sets_u) -> tuple[float, float, float]:
        """(mu, mean_sq, eta) of user u's form; eta lazy via _eta cache."""
        key = (u, sets_u)
        if key not in self._mu:
            idx = self._flat_idx(sets_u)
            r_sel = self.stats.R[u][np.ix_(idx, idx)]
            spec = build_S_u(r_sel, self._beta_flat[u][idx], self.eps2)
            self._mu[key] = spec
            self._mean_sq[key] = spec.mean_sq
        spec = self._mu[key]
        return spec, self._mean_sq[key]

    def _eta_term(self, v: int, sets_v) -> float:
        key = (v, sets_v)
        if key not in self._eta:
            spec, _ = self._own_terms(v, sets_v)
            m2 = float(self.stats.config.n_ports) ** 2
            self._eta[key] = spec.inv_mean_sq() / m2
        return self._eta[key]

    def _pair_terms(self, u: int, v: int, sets_v) -> tuple[float, float]:
        """(tr(S_uv), delta_uv); both depend only on v's ports and (u, v)."""
        key = (u, v, sets_v)
        if key not in self._cross:
            idx = self._flat_idx(sets_v)
            r_v = self.stats.R[v][np.ix_(idx, idx)]
            beta_v = self._beta_flat[v][idx]
            beta_u = self._beta_flat[u][idx]
            r_bar = self.eps2 * r_v if u == v else np.eye(idx.size)
            tr = float(np.trace(build_S_uv(r_v, beta_v, beta_u, r_bar, self.eps2)))
            sel_v = _single_user_view(self.stats.config, v, sets_v,
                                      self.stats.config.n_users)
            d = delta_uv(sel_v, self.stats.beta, self.stats.R, self.eps2, u, v)
            self._cross[key] = (tr, d)
        return self._cross[key]

    def user_rates(self, selection: PortSelection) -> np.ndarray:
        """Per-user analytic rates; -inf where moments diverge."""
        n_users = selection.n_users
        m = float(self.stats.config.n_ports)
        out = np.zeros(n_users)
        try:
            inv_means = {}
            for v in range(n_users):
                if self.p_user[v] == 0.0:
                    continue
                spec, _ = self._own_terms(v, selection.sets[v])
                inv_means[v] = spec.inv_mean()
            for u in range(n_users):
                if self.p_user[u] == 0.0:
                    continue
                denom = self.sigma_n2 / m
                for v in range(n_users):
                    if self.p_user[v] == 0.0:
                        continue
                    _, mean_sq = self._own_terms(v, selection.sets[v])
                    tr, d = self._pair_terms(u, v, selection.sets[v])
                    term = tr / mean_sq
                    if d != 0.0:
                        term += d * self._eta_term(v, selection.sets[v])
                    denom += (self.p_user[v] / inv_means[v]) * term
                out[u] = math.log2(1.0 + (self.p_user[u] / inv_means[u]) / denom)
        except DivergentMomentError:
            return np.full(n_users, -np.inf)
        return out

    def sum_rate(self, selection: PortSelection) -> float:
        rates = self.user_rates(selection)
        return float(rates.sum())


def _single_user_view(cfg, user, sets_u, n_users) -> PortSelection:
    """A selection stub where only `user` holds ports (for delta_uv reuse)."""
    empty = tuple(() for _ in range(cfg.n_bs))
    sets = tuple(sets_u if u == user else empty for u in range(n_users))
    return PortSelection(n_bs=cfg.n_bs, n_ports=cfg.n_ports, sets=sets)


@dataclass
class RoundLog:
    perm: tuple
    init_rate: float
    final_rate: float


@dataclass
class SearchResult:
    selection: PortSelection
    sum_rate: float
    rounds: list  # RoundLog per round, in execution order

    @property
    def init_rates(self) -> np.ndarray:
        return np.array([r.init_rate for r in self.rounds])


def gs_jps(
    stats: ScenarioStatistics,
    counts: np.ndarray,
    p_user: np.ndarray,
    sigma_n2: float,
    eps2: float,
    n_rand: int = 100,
    rng: np.random.Generator | None = None,
) -> SearchResult:
    """Multi-round greedy port selection.

    Each round draws a random user permutation, builds the sequential
    strongest-port start, then sweeps users (by descending initial rate),
    BSs (by descending total port energy for the user), and the user's
    ports there (by descending power), replacing a port with the best
    strictly-improving globally-free port of that BS.  The best round
    wins; ties keep the earliest.  Rounds that repeat an already-seen
    permutation are replayed from cache since the procedure is
    deterministic given the permutation.
    """
    if rng is None:
        rng = np.random.default_rng(stats.config.seed)
    counts = np.asarray(counts, dtype=int)
    cfg = stats.config
    ev = SelectionEvaluator(stats, eps2, p_user, sigma_n2)
    seen: dict[tuple, tuple[PortSelection, float, float]] = {}
    best_sel: PortSelection | None = None
    best_rate = -np.inf
    rounds: list[RoundLog] = []

    for _ in range(n_rand):
        perm = tuple(int(x) for x in rng.permutation(cfg.n_users))
        if perm in seen:
            sel, final_rate, init_rate = seen[perm]
        else:
            sel, final_rate, init_rate = _one_round(stats, counts, ev, perm)
            seen[perm] = (sel, final_rate, init_rate)
        rounds.append(RoundLog(perm=perm, init_rate=init_rate,
                               final_rate=final_rate))
        if final_rate > best_rate:
            best_sel, best_rate = sel, final_rate
    if best_sel is None:
        raise DivergentMomentError(
            "every round scored -inf: the analytic rate needs each user to "
            "hold more than two effective ports once cross-BS coupling is "
            "active; raise ports_per_user or set coupled_ports to 0"
        )
    return SearchResult(selection=best_sel, sum_rate=best_rate, rounds=rounds)


def _one_round(stats, counts, ev: SelectionEvaluator, perm):
    cfg = stats.config
    sel = init_sequential_strongest(stats, counts, user_order=perm)
    init_rates = ev.user_rates(sel)
    init_rate = float(init_rates.sum())
    cur_rate = init_rate
    # users by descending initial rate, ties to the lower user index
    user_order = np.lexsort((np.arange(cfg.n_users), -init_rates))
    for u in user_order:
        u = int(u)
        bs_energy = stats.beta[:, u, :].sum(axis=1)
        bs_order = np.lexsort((np.arange(cfg.n_bs), -bs_energy))
        for b in bs_order:
            b = int(b)
            if counts[b, u] == 0:
                continue
            snapshot = sorted(
                sel.sets[u][b],
                key=lambda p: (-stats.beta[b, u, p - 1], p),
            )
            for port in snapshot:
                taken = {p for v in range(cfg.n_users) for p in sel.sets[v][b]}
                best_cand = None
                best_cand_rate = cur_rate
                for q in range(1, cfg.n_ports + 1):
                    if q in taken:
                        continue
                    cand = sel.replace_port(u, b, port, q)
                    r = ev.sum_rate(cand)
                    if r > best_cand_rate:
                        best_cand, best_cand_rate = cand, r
                if best_cand is not None:
                    sel, cur_rate = best_cand, best_cand_rate
    return sel, cur_rate, init_rate


def _bs_assignments(counts_b, n_ports: int):
    """All ordered disjoint per-user port tuples at one BS, lexicographic."""
    n_users = len(counts_b)

    def recurse(u, taken):
        if u == n_users:
            yield ()
            return
        free = [p for p in range(1, n_ports + 1) if p not in taken]
        for combo in itertools.combinations(free, counts_b[u]):
            for rest in recurse(u + 1, taken | set(combo)):
                yield (combo,) + rest

    return list(recurse(0, frozenset()))


def enumeration_size(counts: np.ndarray, n_ports: int) -> int:
    """Number of no-sharing selections with the given per-(BS, user) counts."""
    counts = np.asarray(counts, dtype=int)
    total = 1
    for b in range(counts.shape[0]):
        size_b = 1
        left = n_ports
        for t in counts[b]:
            size_b *= math.comb(left, int(t))
            left -= int(t)
        total *= size_b
    return total


def exhaustive_oracle(
    stats: ScenarioStatistics,
    counts: np.ndarray,
    p_user: np.ndarray,
    sigma_n2: float,
    eps2: float,
    max_space: int = 1_000_000,
) -> SearchResult:
    """Best selection by full enumeration; only viable for tiny instances.

    Ties break toward the lexicographically smallest selection.
    """
    counts = np.asarray(counts, dtype=int)
    cfg = stats.config
    _check_feasible(counts, cfg.n_ports)
    space = enumeration_size(counts, cfg.n_ports)
    if space > max_space:
        raise FeasibilityError(
            f"enumeration would visit {space} selections (cap {max_space})"
        )
    per_bs = [_bs_assignments(tuple(counts[b]), cfg.n_ports)
              for b in range(cfg.n_bs)]
    ev = SelectionEvaluator(stats, eps2, p_user, sigma_n2)
    best_sel = None
    best_rate = -np.inf
    best_key = None
    for assignment in itertools.product(*per_bs):
        # assignment[b][u] is the port tuple of user u at BS b
        sets = tuple(
            tuple(assignment[b][u] for b in range(cfg.n_bs))
            for u in range(cfg.n_users)
        )
        sel = PortSelection(n_bs=cfg.n_bs, n_ports=cfg.n_ports, sets=sets)
        r = ev.sum_rate(sel)
        key = sets
        if r > best_rate or (r == best_rate and best_key is not None
                             and key < best_key):
            best_sel, best_rate, best_key = sel, r, key
    return SearchResult(selection=best_sel, sum_rate=best_rate, rounds=[])
