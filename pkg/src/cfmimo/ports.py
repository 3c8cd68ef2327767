"""Port selection containers and index bookkeeping.

A selection assigns every user an ordered subset of ports at each BS.  Port
indices are 1-based.  Two users may never share a port at the same BS; that
constraint is what keeps the zero-forcing Gram matrix diagonal, so it is
enforced here rather than trusted downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cfmimo.errors import SelectionError


def selection_matrix(ports, n_ports: int) -> np.ndarray:
    """Binary sampling matrix with one row per selected port.

    ports are 1-based and must be strictly increasing, e.g. ports (2, 4)
    with n_ports 4 gives [[0, 1, 0, 0], [0, 0, 0, 1]].
    """
    ports = list(ports)
    if any(not 1 <= p <= n_ports for p in ports):
        raise SelectionError(f"port index outside 1..{n_ports}: {ports}")
    if any(b <= a for a, b in zip(ports, ports[1:])):
        raise SelectionError(f"ports must be strictly increasing: {ports}")
    mat = np.zeros((len(ports), n_ports))
    for row, p in enumerate(ports):
        mat[row, p - 1] = 1.0
    return mat


@dataclass(frozen=True)
class PortSelection:
    """Immutable per-user, per-BS port assignment.

    `sets[u][b]` is a strictly increasing tuple of 1-based port indices.
    """

    n_bs: int
    n_ports: int
    sets: tuple  # tuple[u] of tuple[b] of tuple[int, ...]

    @classmethod
    def from_lists(cls, n_bs: int, n_ports: int, assignments) -> "PortSelection":
        sets = tuple(
            tuple(tuple(sorted(set(map(int, ports)))) for ports in per_user)
            for per_user in assignments
        )
        sel = cls(n_bs=n_bs, n_ports=n_ports, sets=sets)
        sel.validate()
        return sel

    @property
    def n_users(self) -> int:
        return len(self.sets)

    def validate(self, max_ports_per_user: int | None = None) -> None:
        for u, per_user in enumerate(self.sets):
            if len(per_user) != self.n_bs:
                raise SelectionError(
                    f"user {u + 1} lists {len(per_user)} BSs, expected {self.n_bs}"
                )
            for ports in per_user:
                if any(not 1 <= p <= self.n_ports for p in ports):
                    raise SelectionError(
                        f"user {u + 1} selects out-of-range port in {ports}"
                    )
                if any(b <= a for a, b in zip(ports, ports[1:])):
                    raise SelectionError(
                        f"user {u + 1} has non-increasing ports {ports}"
                    )
        for b in range(self.n_bs):
            seen: dict[int, int] = {}
            for u, per_user in enumerate(self.sets):
                for p in per_user[b]:
                    if p in seen:
                        raise SelectionError(
                            f"port {p} at BS {b + 1} assigned to users "
                            f"{seen[p] + 1} and {u + 1}"
                        )
                    seen[p] = u
        if max_ports_per_user is not None:
            for u in range(self.n_users):
                if self.count(u) > max_ports_per_user:
                    raise SelectionError(
                        f"user {u + 1} holds {self.count(u)} ports, "
                        f"budget is {max_ports_per_user}"
                    )

    def count(self, u: int) -> int:
        """Total number of ports user u holds across all BSs."""
        return sum(len(ports) for ports in self.sets[u])

    @property
    def counts(self) -> np.ndarray:
        return np.array([self.count(u) for u in range(self.n_users)])

    def flat_index(self, u: int) -> np.ndarray:
        """0-based positions of user u's ports in the BS-major stack."""
        idx = [
            b * self.n_ports + p - 1
            for b in range(self.n_bs)
            for p in self.sets[u][b]
        ]
        return np.array(idx, dtype=int)

    def restrict_matrix(self, stats_matrix: np.ndarray, u: int) -> np.ndarray:
        """Submatrix of a stacked (B*M, B*M) matrix on user u's ports."""
        idx = self.flat_index(u)
        return stats_matrix[np.ix_(idx, idx)]

    def beta_selected(self, beta: np.ndarray, u: int) -> np.ndarray:
        """Average port powers on user u's selected ports, stack order."""
        return beta[:, u, :].reshape(-1)[self.flat_index(u)]

    def replace_port(self, u: int, b: int, old: int, new: int) -> "PortSelection":
        """Copy with one port of one user at one BS swapped out."""
        ports = list(self.sets[u][b])
        ports[ports.index(old)] = new
        per_user = list(self.sets[u])
        per_user[b] = tuple(sorted(ports))
        sets = list(self.sets)
        sets[u] = tuple(per_user)
        return PortSelection(n_bs=self.n_bs, n_ports=self.n_ports, sets=tuple(sets))

    def to_json(self, path: str | Path) -> None:
        payload = {
            "format_version": 1,
            "n_bs": self.n_bs,
            "n_ports": self.n_ports,
            "selections": [
                [[b + 1, p] for b in range(self.n_bs) for p in self.sets[u][b]]
                for u in range(self.n_users)
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def from_json(cls, path: str | Path) -> "PortSelection":
        payload = json.loads(Path(path).read_text())
        return _selection_from_payload(payload, payload)


def _selection_from_payload(entry: dict, meta: dict) -> PortSelection:
    try:
        n_bs = int(meta["n_bs"])
        n_ports = int(meta["n_ports"])
        pair_lists = entry["selections"]
    except (KeyError, TypeError) as exc:
        raise SelectionError(
            f"selection payload is missing field {exc}; expected n_bs, "
            "n_ports and a selections list of [bs, port] pairs per user"
        ) from exc
    assignments = []
    for pairs in pair_lists:
        per_user = [[] for _ in range(n_bs)]
        for b, p in pairs:
            if not 1 <= int(b) <= n_bs:
                raise SelectionError(f"BS index {b} outside 1..{n_bs}")
            per_user[int(b) - 1].append(int(p))
        assignments.append(per_user)
    return PortSelection.from_lists(n_bs, n_ports, assignments)


def save_selections(path: str | Path,
                    entries: list[tuple[int, PortSelection]]) -> None:
    """Write several selections to one JSON file, keyed by integer id.

    Each entry reuses the single-selection schema under an `entries` list,
    so consumers can parse one entry the same way in both layouts.
    """
    if not entries:
        raise SelectionError("refusing to write an empty selection file")
    n_bs = entries[0][1].n_bs
    n_ports = entries[0][1].n_ports
    for _, sel in entries:
        if sel.n_bs != n_bs or sel.n_ports != n_ports:
            raise SelectionError("entries disagree on n_bs or n_ports")
    payload = {
        "format_version": 1,
        "n_bs": n_bs,
        "n_ports": n_ports,
        "entries": [
            {
                "id": int(ident),
                "selections": [
                    [[b + 1, p] for b in range(n_bs) for p in sel.sets[u][b]]
                    for u in range(sel.n_users)
                ],
            }
            for ident, sel in entries
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_selections(path: str | Path) -> list[tuple[int, PortSelection]]:
    """Read a selection file; accepts both the single and multi-entry layout.

    A single-selection file comes back as one entry with id 0.  Entries are
    returned sorted by id; duplicate ids are an error.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SelectionError(f"{path} is not valid JSON: {exc}") from exc
    if "entries" not in payload:
        return [(0, _selection_from_payload(payload, payload))]
    out = []
    seen: set[int] = set()
    for entry in payload["entries"]:
        ident = int(entry["id"])
        if ident in seen:
            raise SelectionError(f"duplicate selection id {ident}")
        seen.add(ident)
        out.append((ident, _selection_from_payload(entry, payload)))
    out.sort(key=lambda pair: pair[0])
    return out
