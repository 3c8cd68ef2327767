"""Selection accuracy: the average correct-port rate over (user, BS) blocks.

For N scored samples the metric is

    eta = (1 / UB) * sum_u sum_b (1/N) * sum_n |L ^ Lhat| / |L| * 100%

where L is the label port set of block (u, b) in sample n and Lhat the
predicted one.  Every term is a ratio of small integers, so the sum is
carried in exact rational arithmetic and converted to float once at the
end; any other tool that accumulates the same fractions exactly lands on
the identical double.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from dljps.errors import AccuracyError


def selection_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of label ports recovered, averaged per block then sample.

    Both arguments are (N, U, B, M) 0/1 masks.  Predicted blocks may hold
    any number of ports (extra picks cannot raise the score beyond the
    label set); empty label blocks are refused since their recovery rate
    is undefined.
    """
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape or predicted.ndim != 4:
        raise AccuracyError(
            f"mask shapes disagree: predicted {predicted.shape}, "
            f"labels {labels.shape}"
        )
    if not np.isin(predicted, (0, 1)).all() or not np.isin(labels, (0, 1)).all():
        raise AccuracyError("masks must be 0/1")
    n, n_users, n_bs, _ = labels.shape
    if n == 0:
        raise AccuracyError("no samples to score")
    label_sizes = labels.sum(axis=3)                 # (N, U, B)
    if (label_sizes == 0).any():
        raise AccuracyError("a label block is empty; its rate is undefined")
    overlap = (predicted.astype(bool) & labels.astype(bool)).sum(axis=3)
    total = Fraction(0)
    for u in range(n_users):
        for b in range(n_bs):
            block = Fraction(0)
            for i in range(n):
                block += Fraction(int(overlap[i, u, b]),
                                  int(label_sizes[i, u, b]))
            total += block / n
    return float(total * 100 / (n_users * n_bs))


def masks_from_sets(sets_by_sample: list[list[list[list[int]]]],
                    n_users: int, n_bs: int, n_ports: int) -> np.ndarray:
    """(N, U, B, M) 0/1 mask from nested 0-based port lists sets[u][b]."""
    out = np.zeros((len(sets_by_sample), n_users, n_bs, n_ports), dtype=int)
    for i, sets in enumerate(sets_by_sample):
        for u in range(n_users):
            for b in range(n_bs):
                for m in sets[u][b]:
                    out[i, u, b, m] = 1
    return out
