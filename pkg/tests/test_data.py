import struct

import numpy as np
import pytest

from votemark.data import (
    DatasetFormatError,
    LabeledDataset,
    SPLITS,
    load_idx_dataset,
    make_blobs,
    read_idx_images,
    write_idx_images,
    write_idx_labels,
)

SIZES = {"train": 60, "validation": 10, "test": 20, "mimic-attack": 15, "real-attack": 15}


def test_blobs_shapes_and_partition():
    data = make_blobs(seed=3, classes=3, dim=8, spread=0.2, sizes=SIZES)
    assert data.X.shape == (120, 8)
    assert data.d == 8 and data.c == 3
    assert data.split_sizes() == SIZES
    assert data.y.min() >= 1 and data.y.max() <= 3
    # tags partition the samples: each belongs to exactly one split
    total = sum(len(data.subset(tag)[0]) for tag in SPLITS)
    assert total == len(data)


def test_blobs_values_clipped_to_unit_box():
    data = make_blobs(seed=11, classes=2, dim=4, spread=0.8, sizes={"train": 500})
    assert data.X.min() >= 0.0 and data.X.max() <= 1.0


def test_blobs_deterministic():
    a = make_blobs(seed=5, classes=3, dim=6, spread=0.25, sizes=SIZES)
    b = make_blobs(seed=5, classes=3, dim=6, spread=0.25, sizes=SIZES)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    c = make_blobs(seed=6, classes=3, dim=6, spread=0.25, sizes=SIZES)
    assert not np.array_equal(a.X, c.X)


def test_dataset_validation():
    with pytest.raises(ValueError, match="label"):
        LabeledDataset(X=np.zeros((2, 3)), y=np.array([0, 1]), c=2, split=np.zeros(2, dtype=np.uint8))
    with pytest.raises(ValueError, match="sample count"):
        LabeledDataset(X=np.zeros((2, 3)), y=np.array([1]), c=2, split=np.zeros(2, dtype=np.uint8))


def test_idx_round_trip_two_images(tmp_path):
    images = np.array(
        [[[0, 255, 10], [20, 30, 40], [50, 60, 70]], [[1, 2, 3], [4, 5, 6], [7, 8, 9]]],
        dtype=np.uint8,
    )
    labels = np.array([0, 2], dtype=np.uint8)
    write_idx_images(tmp_path / "imgs", images)
    write_idx_labels(tmp_path / "labs", labels)

    data = load_idx_dataset(tmp_path / "imgs", tmp_path / "labs")
    assert data.X.shape == (2, 9)
    # pixels scaled to [0,1] and exactly recoverable
    assert np.array_equal((data.X * 255).round().astype(np.uint8).reshape(2, 3, 3), images)
    # label byte 0 becomes label 1 after the shift
    assert data.y.tolist() == [1, 3]


def test_idx_first_image_checksum_oracle(tmp_path):
    # independent byte-level parse of the file, no reader code shared
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(4, 5, 5), dtype=np.uint8)
    write_idx_images(tmp_path / "imgs", images)

    raw = (tmp_path / "imgs").read_bytes()
    magic, count, rows, cols = struct.unpack(">iiii", raw[:16])
    assert (magic, count, rows, cols) == (2051, 4, 5, 5)
    first_bytes = raw[16 : 16 + 25]
    checksum = sum(first_bytes)

    parsed = read_idx_images(tmp_path / "imgs")
    assert int(parsed[0].astype(np.int64).sum()) == checksum


def test_idx_bad_magic(tmp_path):
    payload = struct.pack(">iiii", 1234, 1, 2, 2) + bytes(4)
    (tmp_path / "bad").write_bytes(payload)
    with pytest.raises(DatasetFormatError, match="magic"):
        read_idx_images(tmp_path / "bad")


def test_idx_truncated_payload(tmp_path):
    payload = struct.pack(">iiii", 2051, 2, 2, 2) + bytes(5)  # needs 8
    (tmp_path / "short").write_bytes(payload)
    with pytest.raises(DatasetFormatError, match="payload"):
        read_idx_images(tmp_path / "short")


def test_idx_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "imgs", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx_labels(tmp_path / "labs", np.array([0, 1], dtype=np.uint8))
    with pytest.raises(DatasetFormatError, match="mismatch"):
        load_idx_dataset(tmp_path / "imgs", tmp_path / "labs")


def test_idx_split_assignment(tmp_path):
    images = np.arange(4 * 4 * 10, dtype=np.uint64).reshape(10, 4, 4).astype(np.uint8)
    write_idx_images(tmp_path / "imgs", images)
    write_idx_labels(tmp_path / "labs", np.arange(10, dtype=np.uint8) % 3)
    sizes = {"train": 5, "test": 3}
    data = load_idx_dataset(tmp_path / "imgs", tmp_path / "labs", sizes=sizes)
    assert len(data) == 8
    assert data.split_sizes()["train"] == 5 and data.split_sizes()["test"] == 3

    with pytest.raises(ValueError, match="sum to"):
        load_idx_dataset(tmp_path / "imgs", tmp_path / "labs", sizes={"train": 11})
