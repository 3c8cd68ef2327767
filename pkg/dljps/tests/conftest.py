"""Shared builders for synthetic datasets.

Records here are small and self-consistent but synthetic: inputs are random
positive powers and labels mark each block's strongest ports, which mimics
the shape of search-produced data without needing the simulator installed.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from dljps.data import DatasetDims, Record


def make_records(n: int, dims: DatasetDims, per_block: int,
                 seed: int = 0) -> list[Record]:
    """n synthetic records with top-power labels and a flat budget."""
    rng = np.random.default_rng(seed)
    out = []
    for ident in range(n):
        beta = rng.gamma(0.8, size=(dims.stack, dims.n_users))
        beta /= beta.max()
        labels = np.zeros((dims.n_users, dims.n_bs, dims.n_ports), dtype=int)
        for u in range(dims.n_users):
            for b in range(dims.n_bs):
                block = beta[b * dims.n_ports:(b + 1) * dims.n_ports, u]
                top = np.argsort(-block)[:per_block]
                labels[u, b, top] = 1
        counts = np.full((dims.n_bs, dims.n_users), per_block, dtype=int)
        out.append(Record(ident=ident, beta=beta, labels=labels,
                          counts=counts))
    return out


def record_line(rec: Record, dims: DatasetDims) -> str:
    return json.dumps({
        "format_version": 1,
        "id": rec.ident,
        "n_bs": dims.n_bs,
        "n_ports": dims.n_ports,
        "n_users": dims.n_users,
        "beta": rec.beta.tolist(),
        "labels": rec.labels.reshape(dims.n_users, dims.stack).tolist(),
        "counts": rec.counts.tolist(),
    })


def write_dataset(path, records: list[Record], dims: DatasetDims) -> None:
    path.write_text(
        "\n".join(record_line(rec, dims) for rec in records) + "\n")


@pytest.fixture
def tiny_dims() -> DatasetDims:
    return DatasetDims(n_bs=2, n_ports=8, n_users=2)
