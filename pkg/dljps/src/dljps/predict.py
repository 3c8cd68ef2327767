"""From sigmoid scores to feasible port selections.

The raw decision rule takes, per (user, BS) block, the ports with the
highest scores up to that block's budget.  Blocks are scored independently,
so two users can claim the same port of one BS; since downstream rate
evaluation requires disjoint per-BS selections, collisions are resolved by
score priority: within a BS, all (user, port) claims are ranked by score
and granted in order, each user receiving its remaining-best free ports.
A user that loses a port therefore drops to its next-best free one, and on
exact score ties the lower user index, then the lower port index, wins.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from dljps.data import DatasetDims, Record, stack_inputs
from dljps.errors import ModelError
from dljps.model import PortNet

FORMAT_VERSION = 1


def top_ports(block_scores: np.ndarray, budget: int) -> list[int]:
    """Indices of the `budget` largest scores, highest first.

    Ties break toward the lower port index, so the result is deterministic
    for any input.
    """
    block_scores = np.asarray(block_scores)
    order = np.lexsort((np.arange(len(block_scores)), -block_scores))
    return [int(i) for i in order[:budget]]


def resolve_conflicts(scores: np.ndarray, counts: np.ndarray) -> list[list[list[int]]]:
    """Assign disjoint per-BS ports by score priority.

    scores is (U, B, M), counts is (B, U); the result is sets[u][b], a
    sorted list of 0-based port indices with len == counts[b][u] and no
    port granted twice within a BS.
    """
    n_users, n_bs, n_ports = scores.shape
    if counts.shape != (n_bs, n_users):
        raise ModelError(
            f"counts are {counts.shape}, expected ({n_bs}, {n_users})"
        )
    if counts.sum(axis=1).max(initial=0) > n_ports:
        raise ModelError("counts oversubscribe a BS; no disjoint assignment")
    sets: list[list[list[int]]] = [
        [[] for _ in range(n_bs)] for _ in range(n_users)
    ]
    for b in range(n_bs):
        claims = [
            (-scores[u, b, m], u, m)
            for u in range(n_users)
            for m in range(n_ports)
        ]
        claims.sort()
        need = counts[b].astype(int).copy()
        taken = np.zeros(n_ports, dtype=bool)
        for _, u, m in claims:
            if need[u] > 0 and not taken[m]:
                need[u] -= 1
                taken[m] = True
                sets[u][b].append(m)
        # every user's budget is met: each BS hands out sum(counts[b])
        # distinct ports and the loop only stops early if claims run out,
        # which the oversubscription check above excludes
        for u in range(n_users):
            sets[u][b].sort()
    return sets


def predict_selections(model: PortNet, records: list[Record],
                       batch_size: int = 256) -> list[tuple[int, list[list[list[int]]]]]:
    """(id, sets[u][b] of 0-based ports) for each record, conflict-free."""
    if not records:
        return []
    x = stack_inputs(records, model.cfg.normalization)
    scores = model.scores(x, batch_size=batch_size)
    out = []
    for rec, s in zip(records, scores):
        out.append((rec.ident, resolve_conflicts(s, rec.counts)))
    return out


def selections_payload(dims: DatasetDims,
                       entries: list[tuple[int, list[list[list[int]]]]]) -> dict:
    """Serialize predictions in the evaluator's selection-file layout.

    Ports go out 1-based as [bs, port] pairs grouped per user, under an
    `entries` list keyed by record id, with the dataset dimensions at the
    top so consumers can validate before touching any entry.
    """
    return {
        "format_version": FORMAT_VERSION,
        "n_bs": dims.n_bs,
        "n_ports": dims.n_ports,
        "entries": [
            {
                "id": int(ident),
                "selections": [
                    [[b + 1, m + 1] for b in range(dims.n_bs)
                     for m in sets[u][b]]
                    for u in range(dims.n_users)
                ],
            }
            for ident, sets in entries
        ],
    }


def write_selections(path: str | Path, dims: DatasetDims,
                     entries: list[tuple[int, list[list[list[int]]]]]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(selections_payload(dims, entries), indent=1))
    return path
