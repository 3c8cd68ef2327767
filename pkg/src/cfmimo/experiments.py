"""Configuration-driven experiment sweeps and CSV artifact emission.

Every experiment flattens its sweep into an ordered point list, evaluates
the points (optionally across a process pool) and writes the rows in point
order.  Re-running with the same config and seed must reproduce the file
bodies byte for byte, independent of worker count, so

* every point derives its randomness from (system.seed, fixed integer
  tags) through ``SeedSequence`` and never from pool scheduling,
* floats are written with ``repr`` (shortest round-trip form),
* all file writes happen in the parent process after the map completes.

Artifacts are CSV with a comment header that echoes the fully resolved
configuration (plus a format_version and the experiment name), then one
column-name line, then data rows.  Alongside each CSV goes a small script
that renders the matching figure through ``cfmimo.report``; the runner
itself never imports matplotlib.

Sweep values that do not fit the system (a port budget that does not
split over the BSs, a window length beyond the array) are clamped to the
nearest feasible value with a warning, and duplicates after clamping are
dropped, so the emitted grid is always valid and deterministic.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from cfmimo.config import ExperimentConfig, config_header_lines
from cfmimo.errors import (
    ConfigError,
    DivergentMomentError,
    FeasibilityError,
    SelectionError,
)
from cfmimo.feedback import build_codec, compression_ratio, feedback_bits
from cfmimo.linksim import monte_carlo_rate
from cfmimo.ports import load_selections
from cfmimo.rate import RateModel
from cfmimo.scenario import make_scenario
from cfmimo.search import (
    SelectionEvaluator,
    enumeration_size,
    equal_split_counts,
    exhaustive_oracle,
    gs_jps,
    mm_s_baseline,
)

EXPERIMENTS = (
    "analytic-vs-mc",
    "rate-vs-correlation",
    "selection-compare",
    "compression",
    "dl-eval",
)


# ---------------------------------------------------------------------------
# deterministic seeding, formatting, parallel map


def point_rng(seed: int, *tag: int) -> np.random.Generator:
    """Generator keyed by (seed, tag); the same on every worker layout.

    Tags are small fixed integers chosen per experiment and per consumer
    (selection search vs Monte Carlo vs scenario draw), so no two
    consumers ever share a stream by accident.
    """
    entropy = tuple(int(x) for x in (seed, *tag))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def scenario_rng(seed: int, ident: int) -> np.random.Generator:
    """Scenario draw for dataset sample / selection-file entry `ident`.

    Shared between export_dataset and the dl-eval experiment, so external
    selections are scored on exactly the geometry they were produced for.
    """
    return point_rng(seed, ident)


def _fmt(cell) -> str:
    if cell is None:
        return ""
    if isinstance(cell, str):
        return cell
    if isinstance(cell, (bool, np.bool_)):
        return "true" if cell else "false"
    if isinstance(cell, (int, np.integer)):
        return str(int(cell))
    return repr(float(cell))


def _write_csv(path: Path, cfg: ExperimentConfig, experiment: str,
               columns: list, rows: list) -> Path:
    lines = config_header_lines(
        cfg, extra={"format_version": 1, "experiment": experiment}
    )
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(cell) for cell in row) for row in rows)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


_STUB_TEMPLATE = '''#!/usr/bin/env python3
"""Render the {title} figure(s) from the CSV artifacts in this directory."""
from pathlib import Path

from cfmimo import report

for path in report.render_{fn}(Path(__file__).resolve().parent):
    print(path)
'''


def _write_stub(out_dir: Path, name: str) -> Path:
    path = Path(out_dir) / f"plot_{name}.py"
    path.write_text(_STUB_TEMPLATE.format(title=name.replace("_", " "), fn=name))
    return path


def _map_points(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# sweep-value clamping


def _dedupe(values):
    out, seen = [], set()
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def _clamp_p_values(values, sys_cfg) -> list:
    """Feasible per-user port budgets: multiples of n_bs that fit the array."""
    step = sys_cfg.n_bs
    cap = step * (sys_cfg.n_ports // sys_cfg.n_users)
    if cap < step:
        raise FeasibilityError(
            f"{sys_cfg.n_users} users cannot each hold a port on a "
            f"{sys_cfg.n_ports}-port BS"
        )
    out = []
    for want in values:
        eff = min(max(step, (int(want) // step) * step), cap)
        if eff != int(want):
            warnings.warn(
                f"ports_per_user {want} clamped to {eff} (budget must split "
                f"over {step} BSs and fit {sys_cfg.n_ports} ports across "
                f"{sys_cfg.n_users} users)",
                stacklevel=3,
            )
        out.append(eff)
    return _dedupe(out)


def _clamp_range(values, lo, hi, name: str) -> list:
    out = []
    for want in values:
        eff = min(max(want, lo), hi)
        if eff != want:
            warnings.warn(f"{name} {want} clamped into [{lo}, {hi}]",
                          stacklevel=3)
        out.append(eff)
    return _dedupe(out)


# ---------------------------------------------------------------------------
# shared per-point pieces


def _select(stats, counts, eps2: float, select_cfg, rng):
    """One selection by the configured method."""
    if select_cfg.method == "mm-s":
        return mm_s_baseline(stats, counts)
    return gs_jps(stats, counts, stats.p_user, stats.config.sigma_n2, eps2,
                  n_rand=select_cfg.n_rand, rng=rng).selection


def _rates_or_zero(model: RateModel, p_user, sigma_n2: float) -> list:
    """Per-user rates on the conditioned path; divergent moments score 0.

    A divergent inverse moment means the normalized ZF link either carries
    no usable signal energy or leaks unbounded interference, and both
    limits drive the affected user's rate to zero.  Baseline selection
    methods can land on such degenerate picks, so reporting must not die
    on them.
    """
    out = []
    for u in range(model.stats.config.n_users):
        try:
            out.append(float(model.user_rate(u, p_user, sigma_n2)))
        except DivergentMomentError:
            out.append(0.0)
    return out


# ---------------------------------------------------------------------------
# analytic-vs-mc: closed-form report vs link simulation, rate vs P


def _analytic_vs_mc_point(args):
    cfg, idx, p_eff, eps2 = args
    sys_cfg = dataclasses.replace(cfg.system, eps_ce2=float(eps2), eps_q2=0.0)
    stats = make_scenario(sys_cfg, rng=np.random.default_rng(sys_cfg.seed))
    counts = equal_split_counts(p_eff, sys_cfg)
    sel = _select(stats, counts, float(eps2), cfg.select,
                  point_rng(sys_cfg.seed, 100, idx))
    analytic = RateModel(stats, sel, float(eps2)).report(
        stats.p_user, sys_cfg.sigma_n2
    )
    mc = monte_carlo_rate(stats, sel, float(eps2), stats.p_user,
                          sys_cfg.sigma_n2, cfg.run.n_real,
                          point_rng(sys_cfg.seed, 101, idx))
    gap = float(np.max(np.abs(analytic.rate - mc.rate)
                       / np.maximum(mc.rate, 1e-300)))
    row = [int(p_eff), float(eps2)]
    row.extend(float(r) for r in analytic.rate)
    row.extend(float(r) for r in mc.rate)
    row.extend([analytic.sum_rate, mc.sum_rate, gap])
    return row


def run_analytic_vs_mc(cfg: ExperimentConfig, out_dir, workers: int = 1):
    ps = _clamp_p_values(cfg.sweep.p_values, cfg.system)
    es = _dedupe(float(e) for e in cfg.sweep.eps2_values)
    grid = [(p, e) for p in ps for e in es]
    points = [(cfg, i, p, e) for i, (p, e) in enumerate(grid)]
    rows = _map_points(_analytic_vs_mc_point, points, workers)
    n_users = cfg.system.n_users
    cols = ["p", "eps2"]
    cols += [f"analytic_rate_{u + 1}" for u in range(n_users)]
    cols += [f"mc_rate_{u + 1}" for u in range(n_users)]
    cols += ["analytic_sum_rate", "mc_sum_rate", "max_rel_gap"]
    csv = _write_csv(Path(out_dir) / "analytic_vs_mc.csv", cfg,
                     "analytic-vs-mc", cols, rows)
    return [csv, _write_stub(out_dir, "analytic_vs_mc")]


# ---------------------------------------------------------------------------
# rate-vs-correlation: closed-form sum rate over the (rho_s, rho_c, P) grid


def _rate_vs_correlation_point(args):
    cfg, idx, rho_s, rho_c, p_eff = args
    sys_cfg = dataclasses.replace(cfg.system, rho_s=float(rho_s),
                                  rho_c=float(rho_c))
    stats = make_scenario(sys_cfg, rng=np.random.default_rng(sys_cfg.seed))
    counts = equal_split_counts(p_eff, sys_cfg)
    sel = _select(stats, counts, sys_cfg.eps2, cfg.select,
                  point_rng(sys_cfg.seed, 200, idx))
    rates = _rates_or_zero(RateModel(stats, sel, sys_cfg.eps2),
                           stats.p_user, sys_cfg.sigma_n2)
    return [float(rho_s), float(rho_c), int(p_eff), *rates, sum(rates)]


def run_rate_vs_correlation(cfg: ExperimentConfig, out_dir, workers: int = 1):
    ps = _clamp_p_values(cfg.sweep.p_values, cfg.system)
    rss = _clamp_range([float(r) for r in cfg.sweep.rho_s_values],
                       -1.0, 1.0, "rho_s")
    rcs = _clamp_range([float(r) for r in cfg.sweep.rho_c_values],
                       0.0, 1.0, "rho_c")
    grid = [(rs, rc, p) for rs in rss for rc in rcs for p in ps]
    points = [(cfg, i, rs, rc, p) for i, (rs, rc, p) in enumerate(grid)]
    rows = _map_points(_rate_vs_correlation_point, points, workers)
    cols = ["rho_s", "rho_c", "p"]
    cols += [f"rate_{u + 1}" for u in range(cfg.system.n_users)]
    cols += ["sum_rate"]
    csv = _write_csv(Path(out_dir) / "rate_vs_correlation.csv", cfg,
                     "rate-vs-correlation", cols, rows)
    return [csv, _write_stub(out_dir, "rate_vs_correlation")]


# ---------------------------------------------------------------------------
# selection-compare: greedy search vs baseline vs exhaustive, vs P and vs L


def _selection_compare_point(args):
    cfg, axis, axis_id, value, value_idx, p_eff, draw = args
    if axis == "l":
        sys_cfg = dataclasses.replace(cfg.system, eff_ports=int(value))
    else:
        sys_cfg = cfg.system
    # same draw index -> same user placement on both axes and all values
    stats = make_scenario(sys_cfg, rng=point_rng(sys_cfg.seed, 300, draw))
    counts = equal_split_counts(p_eff, sys_cfg)
    eps2 = sys_cfg.eps2
    ev = SelectionEvaluator(stats, eps2, stats.p_user, sys_cfg.sigma_n2)

    gs = gs_jps(stats, counts, stats.p_user, sys_cfg.sigma_n2, eps2,
                n_rand=cfg.select.n_rand,
                rng=point_rng(sys_cfg.seed, 301, axis_id, value_idx, draw))
    mm = mm_s_baseline(stats, counts)
    score_gs = float(gs.sum_rate)
    score_mm = float(ev.sum_rate(mm))
    rate_gs = sum(_rates_or_zero(RateModel(stats, gs.selection, eps2),
                                 stats.p_user, sys_cfg.sigma_n2))
    rate_mm = sum(_rates_or_zero(RateModel(stats, mm, eps2),
                                 stats.p_user, sys_cfg.sigma_n2))

    score_ex = rate_ex = None
    if enumeration_size(counts, sys_cfg.n_ports) <= cfg.select.max_space:
        ex = exhaustive_oracle(stats, counts, stats.p_user, sys_cfg.sigma_n2,
                               eps2, max_space=cfg.select.max_space)
        score_ex = float(ex.sum_rate)
        rate_ex = sum(_rates_or_zero(RateModel(stats, ex.selection, eps2),
                                     stats.p_user, sys_cfg.sigma_n2))
    return [axis, int(value), int(draw), score_gs, score_mm, score_ex,
            rate_gs, rate_mm, rate_ex]


def run_selection_compare(cfg: ExperimentConfig, out_dir, workers: int = 1):
    p_fixed = _clamp_p_values([cfg.select.ports_per_user], cfg.system)[0]
    axes = [
        ("p", 0, [(p, p) for p in _clamp_p_values(cfg.sweep.p_values,
                                                  cfg.system)]),
        ("l", 1, [(l, p_fixed) for l in _clamp_range(
            [int(v) for v in cfg.sweep.l_values],
            max(1, cfg.system.coupled_ports), cfg.system.n_ports,
            "eff_ports")]),
    ]
    points = []
    for axis, axis_id, pairs in axes:
        for value_idx, (value, p_eff) in enumerate(pairs):
            points.extend(
                (cfg, axis, axis_id, value, value_idx, p_eff, draw)
                for draw in range(cfg.run.n_scen)
            )
    rows = _map_points(_selection_compare_point, points, workers)
    cols = ["axis", "value", "draw", "score_gs_jps", "score_mm_s",
            "score_exhaustive", "rate_gs_jps", "rate_mm_s",
            "rate_exhaustive"]
    csv = _write_csv(Path(out_dir) / "selection_compare.csv", cfg,
                     "selection-compare", cols, rows)
    return [csv, _write_stub(out_dir, "selection_compare")]


# ---------------------------------------------------------------------------
# compression: CR1 distribution plus quantized-feedback link rates


def _compression_point(args):
    cfg, axis, axis_id, value, value_idx, p_eff, draw = args
    if axis == "l0":
        sys_cfg = dataclasses.replace(cfg.system, coupled_ports=int(value))
    else:
        sys_cfg = cfg.system
    stats = make_scenario(sys_cfg, rng=point_rng(sys_cfg.seed, 400, draw))
    counts = equal_split_counts(p_eff, sys_cfg)
    sel = _select(stats, counts, sys_cfg.eps2, cfg.select,
                  point_rng(sys_cfg.seed, 401, axis_id, value_idx, draw))
    n_users = sys_cfg.n_users
    codecs = [build_codec(sel.restrict_matrix(stats.R[u], u))
              for u in range(n_users)]
    k_u = [sel.count(u) for u in range(n_users)]
    r_u = [c.n_coeff for c in codecs]
    cr1 = compression_ratio(k_u, r_u)
    ccdf_row = [axis, int(value), int(draw), float(cr1)]
    if draw != 0:
        return ccdf_row, None, None

    # first draw only: run the explicit quantized link for both codec
    # modes (variable-rank vs fixed-budget truncation)
    mc = {}
    for tag, mode in ((402, "rank"), (403, "fixed")):
        mc[mode] = monte_carlo_rate(
            stats, sel, sys_cfg.eps_ce2, stats.p_user, sys_cfg.sigma_n2,
            cfg.run.n_real, point_rng(sys_cfg.seed, tag, axis_id, value_idx),
            quantized=True, codec_mode=mode,
        )
    rates_row = [axis, int(value), float(cr1),
                 mc["rank"].sum_rate, mc["fixed"].sum_rate]
    trace_rows = [
        [axis, int(value), u + 1, int(r_u[u]), int(k_u[u]),
         feedback_bits(r_u[u]), float(cr1)]
        for u in range(n_users)
    ]
    return ccdf_row, rates_row, trace_rows


def run_compression(cfg: ExperimentConfig, out_dir, workers: int = 1):
    p_fixed = _clamp_p_values([cfg.select.ports_per_user], cfg.system)[0]
    axes = [
        ("p", 0, [(p, p) for p in _clamp_p_values(cfg.sweep.p_values,
                                                  cfg.system)]),
        ("l0", 1, [(l0, p_fixed) for l0 in _clamp_range(
            [int(v) for v in cfg.sweep.l0_values],
            0, cfg.system.eff_ports, "coupled_ports")]),
    ]
    points = []
    for axis, axis_id, pairs in axes:
        for value_idx, (value, p_eff) in enumerate(pairs):
            points.extend(
                (cfg, axis, axis_id, value, value_idx, p_eff, draw)
                for draw in range(cfg.run.n_scen)
            )
    results = _map_points(_compression_point, points, workers)

    ccdf_rows = [res[0] for res in results]
    rate_rows = [res[1] for res in results if res[1] is not None]
    trace_rows = [row for res in results if res[2] is not None
                  for row in res[2]]
    out = []
    out.append(_write_csv(
        Path(out_dir) / "compression_ccdf.csv", cfg, "compression",
        ["axis", "value", "draw", "cr1"], ccdf_rows,
    ))
    out.append(_write_csv(
        Path(out_dir) / "compression_rates.csv", cfg, "compression",
        ["axis", "value", "cr1", "sum_rate_s1", "sum_rate_s2"], rate_rows,
    ))
    out.append(_write_csv(
        Path(out_dir) / "feedback_trace.csv", cfg, "compression",
        ["axis", "value", "user", "r_u", "k_u", "bits", "cr1"], trace_rows,
    ))
    out.append(_write_stub(out_dir, "compression"))
    return out


# ---------------------------------------------------------------------------
# dl-eval: rate of externally supplied selections, entry by entry


def _check_entry_shape(ident: int, sel, sys_cfg) -> None:
    if (sel.n_bs != sys_cfg.n_bs or sel.n_ports != sys_cfg.n_ports
            or sel.n_users != sys_cfg.n_users):
        raise SelectionError(
            f"entry {ident}: selection is ({sel.n_bs} BS, {sel.n_ports} "
            f"ports, {sel.n_users} users) but the config says "
            f"({sys_cfg.n_bs}, {sys_cfg.n_ports}, {sys_cfg.n_users})"
        )


def _dl_eval_point(args):
    cfg, ident, sel = args
    sys_cfg = cfg.system
    _check_entry_shape(ident, sel, sys_cfg)
    sel.validate(max_ports_per_user=cfg.select.ports_per_user)
    stats = make_scenario(sys_cfg, rng=scenario_rng(sys_cfg.seed, ident))
    eps2 = sys_cfg.eps2
    rates = _rates_or_zero(RateModel(stats, sel, eps2),
                           stats.p_user, sys_cfg.sigma_n2)
    row = [int(ident), *rates, sum(rates)]
    if cfg.run.with_mc:
        mc = monte_carlo_rate(stats, sel, eps2, stats.p_user,
                              sys_cfg.sigma_n2, cfg.run.n_real,
                              point_rng(sys_cfg.seed, 500, ident))
        row.append(mc.sum_rate)
    if cfg.run.with_reference:
        counts = equal_split_counts(cfg.select.ports_per_user, sys_cfg)
        # same stream as the dataset exporter's label search, so the
        # reference is the selection the entry was trained to imitate
        ref = gs_jps(stats, counts, stats.p_user, sys_cfg.sigma_n2, eps2,
                     n_rand=cfg.select.n_rand,
                     rng=point_rng(sys_cfg.seed, ident, 1))
        ref_sum = sum(_rates_or_zero(RateModel(stats, ref.selection, eps2),
                                     stats.p_user, sys_cfg.sigma_n2))
        row.append(ref_sum)
        row.append(sum(rates) / ref_sum if ref_sum > 0 else None)
    return row


def run_dl_eval(cfg: ExperimentConfig, out_dir, workers: int = 1):
    if not cfg.run.selection_file:
        raise ConfigError(
            "dl-eval needs run.selection_file (or --selections) pointing at "
            "a selection JSON file"
        )
    entries = load_selections(cfg.run.selection_file)
    points = [(cfg, ident, sel) for ident, sel in entries]
    rows = _map_points(_dl_eval_point, points, workers)
    cols = ["id"]
    cols += [f"rate_{u + 1}" for u in range(cfg.system.n_users)]
    cols += ["sum_rate"]
    if cfg.run.with_mc:
        cols.append("mc_sum_rate")
    if cfg.run.with_reference:
        cols += ["ref_sum_rate", "ratio_to_ref"]
    csv = _write_csv(Path(out_dir) / "dl_eval.csv", cfg, "dl-eval",
                     cols, rows)
    return [csv, _write_stub(out_dir, "dl_eval")]


# ---------------------------------------------------------------------------
# dataset export and single-file evaluation


def _dataset_line(args) -> str:
    cfg, ident = args
    sys_cfg = cfg.system
    stats = make_scenario(sys_cfg, rng=scenario_rng(sys_cfg.seed, ident))
    counts = equal_split_counts(cfg.select.ports_per_user, sys_cfg)
    res = gs_jps(stats, counts, stats.p_user, sys_cfg.sigma_n2, sys_cfg.eps2,
                 n_rand=cfg.select.n_rand,
                 rng=point_rng(sys_cfg.seed, ident, 1))
    dim = sys_cfg.n_bs * sys_cfg.n_ports
    beta = np.stack([stats.beta_stack(u) for u in range(sys_cfg.n_users)],
                    axis=1)
    beta = beta / beta.max()
    labels = np.zeros((sys_cfg.n_users, dim), dtype=int)
    for u in range(sys_cfg.n_users):
        labels[u, res.selection.flat_index(u)] = 1
    record = {
        "format_version": 1,
        "id": int(ident),
        "n_bs": sys_cfg.n_bs,
        "n_ports": sys_cfg.n_ports,
        "n_users": sys_cfg.n_users,
        "beta": [[float(x) for x in row] for row in beta],
        "labels": [[int(x) for x in row] for row in labels],
        "counts": [[int(counts[b, u]) for u in range(sys_cfg.n_users)]
                   for b in range(sys_cfg.n_bs)],
    }
    return json.dumps(record)


def export_dataset(cfg: ExperimentConfig, n_samples: int, path,
                   workers: int = 1) -> Path:
    """JSON-lines training data: normalized port powers in, labels out.

    Line `i` holds the per-sample-max normalized beta tensor as B*M rows
    of U columns, the per-user 0/1 selection masks over the BS-major port
    stack, and the per-(BS, user) count matrix.  Labels come from the
    greedy search on the exact scenario reproduced by scenario_rng, so
    dl-eval can later rebuild the identical geometry from the id alone.
    """
    cfg.validate()
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    points = [(cfg, i) for i in range(n_samples)]
    lines = _map_points(_dataset_line, points, workers)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def evaluate_selection_file(path, cfg: ExperimentConfig,
                            rng: np.random.Generator | None = None):
    """(analytic, Monte Carlo) rate reports for one serialized selection.

    The scenario is the config's own (system.seed) drop.  Multi-entry
    files belong to the dl-eval experiment, which re-derives a scenario
    per entry id; here exactly one selection is expected.
    """
    cfg.validate()
    entries = load_selections(path)
    if len(entries) != 1:
        raise SelectionError(
            f"{path} holds {len(entries)} selections; evaluate_selection_file "
            "expects one (use the dl-eval experiment for entry files)"
        )
    sel = entries[0][1]
    sys_cfg = cfg.system
    _check_entry_shape(entries[0][0], sel, sys_cfg)
    sel.validate()
    stats = make_scenario(sys_cfg)
    eps2 = sys_cfg.eps2
    analytic = RateModel(stats, sel, eps2).report(stats.p_user,
                                                  sys_cfg.sigma_n2)
    if rng is None:
        rng = point_rng(sys_cfg.seed, 600)
    mc = monte_carlo_rate(stats, sel, eps2, stats.p_user, sys_cfg.sigma_n2,
                          cfg.run.n_real, rng)
    return analytic, mc


# ---------------------------------------------------------------------------
# dispatcher

_RUNNERS = {
    "analytic-vs-mc": run_analytic_vs_mc,
    "rate-vs-correlation": run_rate_vs_correlation,
    "selection-compare": run_selection_compare,
    "compression": run_compression,
    "dl-eval": run_dl_eval,
}


def run_experiment(cfg: ExperimentConfig, name: str, out_dir,
                   workers: int = 1) -> list:
    """Run one named experiment; returns the paths written."""
    if name not in _RUNNERS:
        raise ConfigError(
            f"unknown experiment {name!r}; available: "
            + ", ".join(EXPERIMENTS)
        )
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[name](cfg, out, workers=workers)
