import json

import numpy as np
import pytest

from conftest import make_records, record_line, write_dataset
from dljps.data import DatasetDims, load_dataset, normalize_inputs, \
    split_records, stack_inputs, stack_labels
from dljps.errors import DataError


def test_load_round_trip(tmp_path, tiny_dims):
    records = make_records(3, tiny_dims, per_block=2, seed=1)
    path = tmp_path / "data.jsonl"
    write_dataset(path, records, tiny_dims)
    dims, back = load_dataset(path)
    assert dims == tiny_dims
    assert [r.ident for r in back] == [0, 1, 2]
    for a, b in zip(records, back):
        np.testing.assert_allclose(a.beta, b.beta)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.counts, b.counts)


def test_load_skips_blank_lines(tmp_path, tiny_dims):
    records = make_records(2, tiny_dims, per_block=1)
    lines = [record_line(records[0], tiny_dims), "",
             record_line(records[1], tiny_dims)]
    path = tmp_path / "data.jsonl"
    path.write_text("\n".join(lines) + "\n")
    _, back = load_dataset(path)
    assert len(back) == 2


def _one_line_payload(tiny_dims):
    rec = make_records(1, tiny_dims, per_block=2)[0]
    return json.loads(record_line(rec, tiny_dims))


@pytest.mark.parametrize("mutation, message", [
    (lambda p: p.pop("n_bs"), "missing field"),
    (lambda p: p.update(format_version=7), "format_version 7"),
    (lambda p: p.update(labels=[[2] * 16, [0] * 16]), "0/1"),
    (lambda p: p.update(counts=[[9, 9], [9, 9]]), "fit within"),
    (lambda p: p.update(beta=[[0.0, 0.0]]), "beta is"),
])
def test_load_rejects_bad_records(tmp_path, tiny_dims, mutation, message):
    payload = _one_line_payload(tiny_dims)
    mutation(payload)
    path = tmp_path / "data.jsonl"
    path.write_text(json.dumps(payload) + "\n")
    with pytest.raises(DataError, match=message):
        load_dataset(path)


def test_load_rejects_label_count_disagreement(tmp_path, tiny_dims):
    payload = _one_line_payload(tiny_dims)
    payload["counts"] = [[1, 1], [1, 1]]   # labels mark 2 ports per block
    path = tmp_path / "data.jsonl"
    path.write_text(json.dumps(payload) + "\n")
    with pytest.raises(DataError, match="disagree with counts"):
        load_dataset(path)


def test_load_rejects_duplicate_ids(tmp_path, tiny_dims):
    rec = make_records(1, tiny_dims, per_block=1)[0]
    line = record_line(rec, tiny_dims)
    path = tmp_path / "data.jsonl"
    path.write_text(line + "\n" + line + "\n")
    with pytest.raises(DataError, match="duplicate id"):
        load_dataset(path)


def test_load_rejects_mixed_dimensions(tmp_path, tiny_dims):
    rec = make_records(1, tiny_dims, per_block=1)[0]
    other_dims = DatasetDims(n_bs=2, n_ports=4, n_users=2)
    other = make_records(1, other_dims, per_block=1)[0]
    path = tmp_path / "data.jsonl"
    path.write_text(record_line(rec, tiny_dims) + "\n"
                    + record_line(other, other_dims) + "\n")
    with pytest.raises(DataError, match="disagree with the first record"):
        load_dataset(path)


def test_load_rejects_broken_json_and_empty_file(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text("not json {\n")
    with pytest.raises(DataError, match="not valid JSON"):
        load_dataset(path)
    path.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_dataset(path)
    with pytest.raises(DataError, match="does not exist"):
        load_dataset(tmp_path / "missing.jsonl")


def test_normalize_modes():
    beta = np.array([[2.0, 4.0], [1.0, 0.5]])
    scaled = normalize_inputs(beta, "max")
    assert scaled.max() == 1.0
    np.testing.assert_allclose(scaled, beta / 4.0)
    np.testing.assert_allclose(normalize_inputs(beta, "none"), beta)
    with pytest.raises(DataError, match="positive maximum"):
        normalize_inputs(np.zeros((2, 2)), "max")
    with pytest.raises(DataError, match="unknown normalization"):
        normalize_inputs(beta, "minmax")


def test_split_sizes_and_determinism(tiny_dims):
    records = make_records(10, tiny_dims, per_block=1)
    train, test = split_records(records, 4, np.random.default_rng(3))
    assert len(test) == 2 and len(train) == 8
    ids = sorted(r.ident for r in train + test)
    assert ids == list(range(10))
    train2, test2 = split_records(records, 4, np.random.default_rng(3))
    assert [r.ident for r in test2] == [r.ident for r in test]
    with pytest.raises(DataError, match="ratio"):
        split_records(records, 0, np.random.default_rng(0))
    with pytest.raises(DataError, match="at least 2"):
        split_records(records[:1], 4, np.random.default_rng(0))


def test_stacking_shapes(tiny_dims):
    records = make_records(5, tiny_dims, per_block=2)
    x = stack_inputs(records)
    y = stack_labels(records)
    assert x.shape == (5, 1, tiny_dims.stack, tiny_dims.n_users)
    assert x.dtype == np.float32
    assert y.shape == (5, tiny_dims.n_users, tiny_dims.n_bs,
                       tiny_dims.n_ports)
    assert set(np.unique(y)) <= {0.0, 1.0}
