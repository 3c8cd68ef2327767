"""The `simulate` command line tool.

Subcommands are the experiment names plus `export-dataset` (training data
for the selection imitator), `scenario-dump` (one drop's port powers and
correlation matrices) and `report` (render figures from a directory of
experiment CSVs).  Flags override the corresponding config keys, and the
resolved values land in every artifact header, so a run is reproducible
from its own output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from cfmimo.config import load_config
from cfmimo.errors import (
    ConfigError,
    DivergentMomentError,
    FeasibilityError,
    PrecoderError,
    SelectionError,
    SimulationError,
    StatisticsError,
)
from cfmimo.experiments import EXPERIMENTS, export_dataset, run_experiment

_EXPECTED_ERRORS = (
    ConfigError,
    DivergentMomentError,
    FeasibilityError,
    PrecoderError,
    SelectionError,
    SimulationError,
    StatisticsError,
    FileNotFoundError,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="config file; omitted means all defaults")
    parser.add_argument("--out", required=True, metavar="DIR",
                        help="output directory for artifacts")
    parser.add_argument("--seed", type=int, default=None,
                        help="override system.seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="process count for sweep points (default 1)")


def _add_run_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-real", type=int, default=None,
                        help="override run.n_real (Monte Carlo realizations)")
    parser.add_argument("--n-scen", type=int, default=None,
                        help="override run.n_scen (scenario draws)")
    parser.add_argument("--selections", default=None, metavar="FILE",
                        help="override run.selection_file")
    parser.add_argument("--render", action="store_true",
                        help="also render figures after the run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Port-selection CSI feedback experiments for cell-free "
                    "MIMO downlink.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_common(p)
        _add_run_overrides(p)

    p = sub.add_parser("export-dataset",
                       help="write JSON-lines training data for the "
                            "selection imitator")
    _add_common(p)
    p.add_argument("--n-samples", type=int, required=True,
                   help="number of scenario samples to export")

    p = sub.add_parser("scenario-dump",
                       help="write one drop's port powers (CSV) and "
                            "correlation matrices (JSON sidecar)")
    _add_common(p)

    p = sub.add_parser("report",
                       help="render PNG figures from experiment CSVs")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="directory holding the CSV artifacts")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["system.seed"] = str(args.seed)
    if getattr(args, "n_real", None) is not None:
        out["run.n_real"] = str(args.n_real)
    if getattr(args, "n_scen", None) is not None:
        out["run.n_scen"] = str(args.n_scen)
    if getattr(args, "selections", None):
        out["run.selection_file"] = args.selections
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            from cfmimo import report
            for path in report.render_all(args.out):
                print(path)
            return 0

        cfg = load_config(args.config, _overrides(args))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "export-dataset":
            print(export_dataset(cfg, args.n_samples,
                                 out_dir / "dataset.jsonl",
                                 workers=args.workers))
            return 0

        if args.command == "scenario-dump":
            from cfmimo.scenario import dump_scenario, make_scenario
            stats = make_scenario(cfg.system)
            dump_scenario(stats, out_dir / "scenario.csv", cfg)
            print(out_dir / "scenario.csv")
            print(out_dir / "scenario_R.json")
            return 0

        for path in run_experiment(cfg, args.command, out_dir,
                                   workers=args.workers):
            print(path)
        if args.render:
            from cfmimo import report
            for path in report.render_all(out_dir):
                print(path)
        return 0
    except _EXPECTED_ERRORS as exc:
        print(f"simulate: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
