"""Figure rendering for experiment artifacts.

Lives apart from the runners so the simulation core never imports
matplotlib; the CLI report path and the per-experiment plot stubs are the
only callers.  Every renderer reads the header-documented CSVs emitted by
cfmimo.experiments and writes PNG files next to them, returning the paths
written.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def read_artifact(path) -> tuple[dict, list, list]:
    """(meta, columns, rows) from a header-documented CSV.

    meta maps header keys to their raw string values; rows are dicts of
    raw cell strings keyed by column name, empty cells kept as "".
    """
    meta: dict[str, str] = {}
    columns: list[str] | None = None
    rows: list[dict] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                meta[key.strip()] = val.strip()
            continue
        if not line.strip():
            continue
        cells = line.split(",")
        if columns is None:
            columns = cells
        else:
            rows.append(dict(zip(columns, cells)))
    return meta, columns or [], rows


def _floats(rows: list, name: str) -> np.ndarray:
    return np.array([float(r[name]) if r[name] != "" else np.nan
                     for r in rows])


def _groups(rows: list, *names: str) -> list:
    """Distinct value tuples of the named columns, in first-seen order."""
    seen: list = []
    for r in rows:
        key = tuple(r[n] for n in names)
        if key not in seen:
            seen.append(key)
    return seen


def _save(fig, out_dir: Path, name: str) -> Path:
    path = Path(out_dir) / name
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_analytic_vs_mc(out_dir) -> list:
    out_dir = Path(out_dir)
    _, _, rows = read_artifact(out_dir / "analytic_vs_mc.csv")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for (eps2,) in _groups(rows, "eps2"):
        sub = [r for r in rows if r["eps2"] == eps2]
        p = _floats(sub, "p")
        ax.plot(p, _floats(sub, "analytic_sum_rate"), "-o",
                label=f"analytic, eps2={eps2}")
        ax.plot(p, _floats(sub, "mc_sum_rate"), "x--",
                label=f"simulated, eps2={eps2}")
    ax.set_xlabel("ports per user")
    ax.set_ylabel("sum rate [bit/s/Hz]")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return [_save(fig, out_dir, "analytic_vs_mc.png")]


def render_rate_vs_correlation(out_dir) -> list:
    out_dir = Path(out_dir)
    _, _, rows = read_artifact(out_dir / "rate_vs_correlation.csv")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for rho_s, rho_c in _groups(rows, "rho_s", "rho_c"):
        sub = [r for r in rows
               if r["rho_s"] == rho_s and r["rho_c"] == rho_c]
        ax.plot(_floats(sub, "p"), _floats(sub, "sum_rate"), "-o",
                label=f"rho_s={rho_s}, rho_c={rho_c}")
    ax.set_xlabel("ports per user")
    ax.set_ylabel("sum rate [bit/s/Hz]")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return [_save(fig, out_dir, "rate_vs_correlation.png")]


def render_selection_compare(out_dir) -> list:
    out_dir = Path(out_dir)
    _, _, rows = read_artifact(out_dir / "selection_compare.csv")
    axes_present = [a for (a,) in _groups(rows, "axis")]
    fig, ax_arr = plt.subplots(1, len(axes_present),
                               figsize=(5.2 * len(axes_present), 4.2),
                               squeeze=False)
    labels = {"score_gs_jps": "GS-JPS", "score_mm_s": "MM-S",
              "score_exhaustive": "exhaustive"}
    for k, axis in enumerate(axes_present):
        ax = ax_arr[0][k]
        sub = [r for r in rows if r["axis"] == axis]
        values = sorted({float(r["value"]) for r in sub})
        for col, label in labels.items():
            means = []
            for v in values:
                scores = [float(r[col]) for r in sub
                          if float(r["value"]) == v and r[col] != ""]
                means.append(np.mean(scores) if scores else np.nan)
            ax.plot(values, means, "-o", label=label)
        ax.set_xlabel("ports per user" if axis == "p"
                      else "effective ports per link")
        ax.set_ylabel("mean sum rate [bit/s/Hz]")
        ax.grid(True, alpha=0.3)
        ax.legend()
    return [_save(fig, out_dir, "selection_compare.png")]


def render_compression(out_dir) -> list:
    out_dir = Path(out_dir)
    written = []

    _, _, ccdf_rows = read_artifact(out_dir / "compression_ccdf.csv")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for axis, value in _groups(ccdf_rows, "axis", "value"):
        sub = [r for r in ccdf_rows
               if r["axis"] == axis and r["value"] == value]
        cr = np.sort(_floats(sub, "cr1"))
        # P(CR1 > x) over the scenario draws
        ccdf = 1.0 - np.arange(1, cr.size + 1) / cr.size
        ax.step(cr, ccdf, where="post", label=f"{axis}={value}")
    ax.set_xlabel("compression ratio CR1")
    ax.set_ylabel("P(CR1 > x)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small")
    written.append(_save(fig, out_dir, "compression_ccdf.png"))

    _, _, rate_rows = read_artifact(out_dir / "compression_rates.csv")
    axes_present = [a for (a,) in _groups(rate_rows, "axis")]
    fig, ax_arr = plt.subplots(1, max(len(axes_present), 1),
                               figsize=(5.2 * max(len(axes_present), 1), 4.2),
                               squeeze=False)
    for k, axis in enumerate(axes_present):
        ax = ax_arr[0][k]
        sub = [r for r in rate_rows if r["axis"] == axis]
        v = _floats(sub, "value")
        ax.plot(v, _floats(sub, "sum_rate_s1"), "-o", label="variable rank")
        ax.plot(v, _floats(sub, "sum_rate_s2"), "-s", label="fixed budget")
        ax.set_xlabel("ports per user" if axis == "p"
                      else "coupled ports per window")
        ax.set_ylabel("sum rate [bit/s/Hz]")
        ax.grid(True, alpha=0.3)
        ax.legend()
    written.append(_save(fig, out_dir, "compression_rates.png"))
    return written


def render_dl_eval(out_dir) -> list:
    out_dir = Path(out_dir)
    _, columns, rows = read_artifact(out_dir / "dl_eval.csv")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ids = _floats(rows, "id")
    ax.plot(ids, _floats(rows, "sum_rate"), "o", label="supplied selections")
    if "ref_sum_rate" in columns:
        ax.plot(ids, _floats(rows, "ref_sum_rate"), "x",
                label="greedy search reference")
    if "mc_sum_rate" in columns:
        ax.plot(ids, _floats(rows, "mc_sum_rate"), "+",
                label="simulated")
    ax.set_xlabel("entry id")
    ax.set_ylabel("sum rate [bit/s/Hz]")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return [_save(fig, out_dir, "dl_eval.png")]


_RENDERERS = {
    "analytic_vs_mc.csv": render_analytic_vs_mc,
    "rate_vs_correlation.csv": render_rate_vs_correlation,
    "selection_compare.csv": render_selection_compare,
    "compression_ccdf.csv": render_compression,
    "dl_eval.csv": render_dl_eval,
}


def render_all(out_dir) -> list:
    """Render every figure whose source CSV exists in out_dir."""
    out_dir = Path(out_dir)
    written = []
    for trigger, renderer in _RENDERERS.items():
        if (out_dir / trigger).exists():
            written.extend(renderer(out_dir))
    return written
