"""Command line front end: train, predict, score.

All three commands read a JSON-lines dataset via --data and write their
artifacts under --out.  `train` fits the network and stores the weights,
the manifest (dimensions, hyperparameters, train/test id split) and a
per-epoch loss log.  `predict` rebuilds a trained model and writes a
selection file for the chosen split, in the same JSON layout the label
generator uses, so the simulator's evaluation command accepts it as-is.
`score` additionally compares predictions against the dataset labels and
reports the average correct-port rate.

Prediction is deterministic for a saved model, so --seed only matters to
`train`; the other commands accept it for interface symmetry.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from dljps.accuracy import masks_from_sets, selection_accuracy
from dljps.data import load_dataset, stack_labels
from dljps.errors import AccuracyError, DataError, ModelError, TrainingError
from dljps.model import DlConfig, load_model, save_model
from dljps.predict import predict_selections, write_selections
from dljps.train import train_model

_EXPECTED_ERRORS = (
    AccuracyError,
    DataError,
    ModelError,
    TrainingError,
    FileNotFoundError,
)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dljps",
        description="train and apply the learned port-selection imitator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", required=True, metavar="FILE",
                       help="JSON-lines dataset of port powers and labels")
        p.add_argument("--out", required=True, metavar="DIR",
                       help="directory for artifacts")
        p.add_argument("--seed", type=int, default=0, metavar="N")

    train = sub.add_parser("train", help="fit the network, store the model")
    common(train)
    train.add_argument("--epochs", type=int, default=None,
                       help="override the default epoch count")
    train.add_argument("--batch-size", type=int, default=None)
    train.add_argument("--split-ratio", type=int, default=None,
                       help="train size as a multiple of test size")
    train.add_argument("--pos-weight", default=None, metavar="W",
                       help="loss weight on positive labels: a number, "
                            "'auto' for the negative/positive ratio, or 1 "
                            "to disable balancing (default auto)")

    for name, text in (("predict", "write selections for a data split"),
                       ("score", "accuracy of predictions against labels")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--model", metavar="DIR", default=None,
                       help="model directory (default: --out)")
        p.add_argument("--split", choices=("test", "train", "all"),
                       default="test",
                       help="which manifest split to run on (default test)")
    return parser


def _pick_split(records, manifest: dict, split: str):
    if split == "all":
        return records
    wanted = set(manifest.get(f"{split}_ids", []))
    picked = [rec for rec in records if rec.ident in wanted]
    if not picked:
        raise DataError(
            f"no record ids from the manifest's {split} split are present "
            "in this data file; pass --split all to ignore the split"
        )
    return picked


def _train(args) -> int:
    dims, records = load_dataset(args.data)
    cfg = DlConfig()
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.split_ratio is not None:
        overrides["split_ratio"] = args.split_ratio
    if args.pos_weight is not None:
        if args.pos_weight == "auto":
            overrides["pos_weight"] = "auto"
        else:
            try:
                overrides["pos_weight"] = float(args.pos_weight)
            except ValueError:
                raise ModelError(
                    f"--pos-weight must be a number or 'auto', "
                    f"got {args.pos_weight!r}"
                ) from None
    if overrides:
        cfg = replace(cfg, **overrides)
    result = train_model(records, dims, cfg, seed=args.seed)
    weights, manifest = save_model(args.out, result.model, args.seed,
                                   result.train_ids, result.test_ids,
                                   result.losses)
    log = Path(args.out) / "train_log.csv"
    lines = ["epoch,loss"]
    lines += [f"{i},{loss!r}" for i, loss in enumerate(result.losses)]
    log.write_text("\n".join(lines) + "\n")
    print(weights)
    print(manifest)
    print(log)
    return 0


def _load_for_inference(args):
    dims, records = load_dataset(args.data)
    model_dir = args.model if args.model else args.out
    model, manifest = load_model(model_dir)
    if model.dims != dims:
        raise ModelError(
            f"model was trained on ({model.dims.n_bs} BS, "
            f"{model.dims.n_ports} ports, {model.dims.n_users} users) but "
            f"the data file has ({dims.n_bs}, {dims.n_ports}, {dims.n_users})"
        )
    return dims, _pick_split(records, manifest, args.split), model


def _predict(args) -> int:
    dims, records, model = _load_for_inference(args)
    entries = predict_selections(model, records)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(write_selections(out_dir / "selections.json", dims, entries))
    return 0


def _score(args) -> int:
    dims, records, model = _load_for_inference(args)
    entries = predict_selections(model, records)
    predicted = masks_from_sets([sets for _, sets in entries],
                                dims.n_users, dims.n_bs, dims.n_ports)
    labels = stack_labels(records).astype(int)
    acc = selection_accuracy(predicted, labels)
    # the uninformed reference: picking each block's ports uniformly at
    # random recovers T/M of the labels on average
    budgets = [int(rec.counts[b, u]) for rec in records
               for u in range(dims.n_users) for b in range(dims.n_bs)]
    baseline = 100.0 * sum(budgets) / (len(budgets) * dims.n_ports)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "accuracy_pct": acc,
        "random_baseline_pct": baseline,
        "n_samples": len(records),
        "split": args.split,
    }
    path = out_dir / "accuracy.json"
    path.write_text(json.dumps(report, indent=1))
    print(f"accuracy {acc:.2f}% over {len(records)} samples "
          f"(uninformed baseline {baseline:.2f}%)")
    print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "train":
            return _train(args)
        if args.command == "predict":
            return _predict(args)
        return _score(args)
    except _EXPECTED_ERRORS as exc:
        print(f"dljps: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
