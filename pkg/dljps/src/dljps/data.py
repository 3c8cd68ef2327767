"""Loading and checking of the JSON-lines port-power dataset.

Each line is one scenario: a (B*M, U) matrix of per-sample-max normalized
average port powers (the network input), a (U, B*M) 0/1 label mask over the
BS-major port stack (the selections a greedy search made for that scenario),
and the (B, U) matrix of how many ports each BS owes each user.  Records
carry integer ids so selections predicted from a record can later be scored
against the exact scenario that produced it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dljps.errors import DataError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetDims:
    """Shape contract shared by every record in one dataset file."""

    n_bs: int
    n_ports: int
    n_users: int

    @property
    def stack(self) -> int:
        return self.n_bs * self.n_ports

    @property
    def n_outputs(self) -> int:
        return self.n_users * self.n_bs * self.n_ports


@dataclass(frozen=True)
class Record:
    """One scenario: input powers, label mask, and the port budget."""

    ident: int
    beta: np.ndarray     # (B*M, U) float, BS-major rows
    labels: np.ndarray   # (U, B, M) 0/1 int
    counts: np.ndarray   # (B, U) int


def _as_record(payload: dict, dims: DatasetDims, line_no: int) -> Record:
    beta = np.asarray(payload["beta"], dtype=np.float64)
    labels = np.asarray(payload["labels"], dtype=np.int64)
    counts = np.asarray(payload["counts"], dtype=np.int64)
    if beta.shape != (dims.stack, dims.n_users):
        raise DataError(
            f"line {line_no}: beta is {beta.shape}, expected "
            f"({dims.stack}, {dims.n_users})"
        )
    if labels.shape != (dims.n_users, dims.stack):
        raise DataError(
            f"line {line_no}: labels are {labels.shape}, expected "
            f"({dims.n_users}, {dims.stack})"
        )
    if counts.shape != (dims.n_bs, dims.n_users):
        raise DataError(
            f"line {line_no}: counts are {counts.shape}, expected "
            f"({dims.n_bs}, {dims.n_users})"
        )
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"line {line_no}: labels must be 0/1")
    if (counts < 0).any() or counts.sum(axis=1).max() > dims.n_ports:
        raise DataError(
            f"line {line_no}: counts must be non-negative and fit within "
            f"{dims.n_ports} ports per BS"
        )
    labels = labels.reshape(dims.n_users, dims.n_bs, dims.n_ports)
    # each (user, BS) block must light up exactly the budgeted port count,
    # otherwise the mask and the budget tell different stories
    block_sums = labels.sum(axis=2)          # (U, B)
    if not np.array_equal(block_sums.T, counts):
        raise DataError(
            f"line {line_no}: label mask sums disagree with counts"
        )
    return Record(ident=int(payload["id"]), beta=beta, labels=labels,
                  counts=counts)


def load_dataset(path: str | Path) -> tuple[DatasetDims, list[Record]]:
    """Read a JSON-lines dataset, checking schema and cross-field consistency.

    All records must agree on (n_bs, n_ports, n_users) and carry distinct
    ids; the first line fixes the dimensions.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    dims: DatasetDims | None = None
    records: list[Record] = []
    seen: set[int] = set()
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(
                    f"line {line_no}: not valid JSON: {exc}"
                ) from exc
            try:
                version = int(payload["format_version"])
                line_dims = DatasetDims(int(payload["n_bs"]),
                                        int(payload["n_ports"]),
                                        int(payload["n_users"]))
            except (KeyError, TypeError) as exc:
                raise DataError(
                    f"line {line_no}: missing field {exc}"
                ) from exc
            if version != FORMAT_VERSION:
                raise DataError(
                    f"line {line_no}: format_version {version}, "
                    f"this reader understands {FORMAT_VERSION}"
                )
            if dims is None:
                dims = line_dims
            elif line_dims != dims:
                raise DataError(
                    f"line {line_no}: dimensions {line_dims} disagree with "
                    f"the first record's {dims}"
                )
            rec = _as_record(payload, dims, line_no)
            if rec.ident in seen:
                raise DataError(f"line {line_no}: duplicate id {rec.ident}")
            seen.add(rec.ident)
            records.append(rec)
    if dims is None:
        raise DataError(f"dataset file {path} is empty")
    return dims, records


def normalize_inputs(beta: np.ndarray, mode: str = "max") -> np.ndarray:
    """Scale one input matrix into a network-friendly range.

    "max" divides by the sample's largest entry, which is a no-op on data
    already exported that way; "none" passes through.  Normalization never
    changes the within-sample ordering the labels were derived from.
    """
    if mode == "none":
        return np.asarray(beta, dtype=np.float64)
    if mode != "max":
        raise DataError(f"unknown normalization {mode!r}")
    beta = np.asarray(beta, dtype=np.float64)
    top = beta.max()
    if not np.isfinite(top) or top <= 0:
        raise DataError("input powers must be finite with a positive maximum")
    return beta / top


def split_records(records: list[Record], ratio: int,
                  rng: np.random.Generator) -> tuple[list[Record], list[Record]]:
    """Shuffled train/test split with train size = ratio * test size.

    The test share is n // (ratio + 1), at least one record, so ratio 4
    yields the usual 80/20 split.  Needs at least two records: training
    with an empty test side hides every generalization question.
    """
    if ratio < 1:
        raise DataError(f"split ratio must be >= 1, got {ratio}")
    if len(records) < 2:
        raise DataError("need at least 2 records to split off a test set")
    order = rng.permutation(len(records))
    n_test = max(1, len(records) // (ratio + 1))
    test_idx = set(order[:n_test].tolist())
    train = [rec for i, rec in enumerate(records) if i not in test_idx]
    test = [rec for i, rec in enumerate(records) if i in test_idx]
    return train, test


def stack_inputs(records: list[Record], mode: str = "max") -> np.ndarray:
    """(n, 1, B*M, U) float32 tensor of normalized inputs, channel-first."""
    mats = [normalize_inputs(rec.beta, mode) for rec in records]
    return np.stack(mats)[:, None, :, :].astype(np.float32)


def stack_labels(records: list[Record]) -> np.ndarray:
    """(n, U, B, M) float32 tensor of 0/1 selection masks."""
    return np.stack([rec.labels for rec in records]).astype(np.float32)
