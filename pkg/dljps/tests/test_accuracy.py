from fractions import Fraction

import numpy as np
import pytest

from dljps.accuracy import masks_from_sets, selection_accuracy
from dljps.errors import AccuracyError


def _mask(n, u, b, m):
    return np.zeros((n, u, b, m), dtype=int)


def test_identical_masks_score_exactly_100():
    labels = _mask(4, 2, 2, 8)
    labels[:, :, :, :2] = 1
    assert selection_accuracy(labels.copy(), labels) == 100.0


def test_disjoint_masks_score_exactly_0():
    labels = _mask(3, 2, 2, 8)
    labels[:, :, :, :2] = 1
    predicted = _mask(3, 2, 2, 8)
    predicted[:, :, :, 4:6] = 1
    assert selection_accuracy(predicted, labels) == 0.0


def test_hand_computed_partial_overlap():
    # one sample, one user, two BSs of four ports; labels {0,1} each side,
    # predictions {1,2} and {0,1}: block rates 1/2 and 1, average 75%
    labels = _mask(1, 1, 2, 4)
    labels[0, 0, :, :2] = 1
    predicted = _mask(1, 1, 2, 4)
    predicted[0, 0, 0, 1:3] = 1
    predicted[0, 0, 1, :2] = 1
    assert selection_accuracy(predicted, labels) == 75.0


def test_matches_independent_set_based_recomputation():
    rng = np.random.default_rng(7)
    n, n_users, n_bs, n_ports = 23, 3, 2, 9
    labels = _mask(n, n_users, n_bs, n_ports)
    predicted = _mask(n, n_users, n_bs, n_ports)
    for i in range(n):
        for u in range(n_users):
            for b in range(n_bs):
                size = rng.integers(1, 4)
                labels[i, u, b, rng.choice(n_ports, size, replace=False)] = 1
                predicted[i, u, b,
                          rng.choice(n_ports, size, replace=False)] = 1
    total = Fraction(0)
    for u in range(n_users):
        for b in range(n_bs):
            block = Fraction(0)
            for i in range(n):
                lab = {m for m in range(n_ports) if labels[i, u, b, m]}
                pred = {m for m in range(n_ports) if predicted[i, u, b, m]}
                block += Fraction(len(lab & pred), len(lab))
            total += block / n
    expected = float(total * 100 / (n_users * n_bs))
    assert selection_accuracy(predicted, labels) == expected


def test_rejects_bad_inputs():
    labels = _mask(2, 1, 1, 4)
    labels[:, :, :, 0] = 1
    with pytest.raises(AccuracyError, match="shapes disagree"):
        selection_accuracy(_mask(2, 1, 1, 5), labels)
    with pytest.raises(AccuracyError, match="empty"):
        selection_accuracy(labels, _mask(2, 1, 1, 4))
    bad = labels.copy()
    bad[0, 0, 0, 1] = 3
    with pytest.raises(AccuracyError, match="0/1"):
        selection_accuracy(bad, labels)
    with pytest.raises(AccuracyError, match="no samples"):
        selection_accuracy(_mask(0, 1, 1, 4), _mask(0, 1, 1, 4))


def test_masks_from_sets_round_trip():
    sets = [
        [[[0, 3], [1]], [[2], []]],
        [[[1], [0]], [[], [3]]],
    ]
    mask = masks_from_sets(sets, n_users=2, n_bs=2, n_ports=4)
    assert mask.shape == (2, 2, 2, 4)
    assert mask[0, 0, 0].tolist() == [1, 0, 0, 1]
    assert mask[0, 0, 1].tolist() == [0, 1, 0, 0]
    assert mask[0, 1, 0].tolist() == [0, 0, 1, 0]
    assert mask[1, 1, 1].tolist() == [0, 0, 0, 1]
    assert mask.sum() == 7
