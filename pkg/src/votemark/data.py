"""Datasets: labeled feature vectors with a five-way split, a synthetic blob
generator, and IDX image/label file IO.

Features are float64 in [0, 1]; labels are integers in 1..c. Each sample
carries exactly one split tag, so the tags partition the dataset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import atomic_write_bytes

SPLITS = ("train", "validation", "test", "mimic-attack", "real-attack")

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


class DatasetFormatError(ValueError):
    """Raised when an IDX file does not follow the expected binary layout."""


@dataclass
class LabeledDataset:
    """Feature matrix X (N, d), labels y (N,) in 1..c, and per-sample split tags."""

    X: np.ndarray
    y: np.ndarray
    c: int
    split: np.ndarray  # (N,) uint8 indices into SPLITS

    def __post_init__(self) -> None:
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        self.split = np.ascontiguousarray(self.split, dtype=np.uint8)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.split.shape != (n,):
            raise ValueError("X, y and split must agree on sample count")
        if self.c < 2:
            raise ValueError("need at least 2 classes")
        if n and (self.y.min() < 1 or self.y.max() > self.c):
            raise ValueError(f"labels must lie in [1, {self.c}]")
        if n and self.split.max() >= len(SPLITS):
            raise ValueError("unknown split tag code")
        for a in (self.X, self.y, self.split):
            a.flags.writeable = False

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        """(X, y) restricted to one split tag."""
        idx = self.split == SPLITS.index(tag)
        return self.X[idx], self.y[idx]

    def split_sizes(self) -> dict[str, int]:
        return {tag: int((self.split == i).sum()) for i, tag in enumerate(SPLITS)}


def split_codes(sizes: dict[str, int]) -> np.ndarray:
    """Sequential tag codes for the given per-split sizes (order of SPLITS)."""
    parts = []
    for i, tag in enumerate(SPLITS):
        parts.append(np.full(int(sizes.get(tag, 0)), i, dtype=np.uint8))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)


def make_blobs(seed: int, classes: int, dim: int, spread: float, sizes: dict[str, int]) -> LabeledDataset:
    """Gaussian class clusters inside the unit box, clipped to [0, 1].

    Class means are drawn once from [0.2, 0.8]^dim; every split draws fresh
    samples from the same class-conditional distributions, so all five splits
    share one underlying task.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if spread <= 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.2, 0.8, size=(classes, dim))

    xs, ys = [], []
    for tag in SPLITS:
        n = int(sizes.get(tag, 0))
        if n == 0:
            continue
        # balanced labels, order shuffled deterministically
        labels = np.tile(np.arange(1, classes + 1), n // classes + 1)[:n]
        rng.shuffle(labels)
        feats = means[labels - 1] + rng.normal(0.0, spread, size=(n, dim))
        xs.append(np.clip(feats, 0.0, 1.0))
        ys.append(labels)
    X = np.concatenate(xs) if xs else np.zeros((0, dim))
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    return LabeledDataset(X=X, y=y, c=classes, split=split_codes(sizes))


# --- IDX binary format (big-endian magic, dims, raw uint8 payload) ---


def _read_be32(buf: bytes, off: int, source: str) -> int:
    if off + 4 > len(buf):
        raise DatasetFormatError(f"{source}: truncated header")
    return struct.unpack(">i", buf[off : off + 4])[0]


def read_idx_images(path: str | Path) -> np.ndarray:
    """Raw (N, rows, cols) uint8 pixel array from an IDX image file."""
    raw = Path(path).read_bytes()
    magic = _read_be32(raw, 0, str(path))
    if magic != IDX_IMAGE_MAGIC:
        raise DatasetFormatError(f"{path}: bad image magic {magic} (expected {IDX_IMAGE_MAGIC})")
    count = _read_be32(raw, 4, str(path))
    rows = _read_be32(raw, 8, str(path))
    cols = _read_be32(raw, 12, str(path))
    need = count * rows * cols
    payload = raw[16:]
    if len(payload) != need:
        raise DatasetFormatError(f"{path}: payload holds {len(payload)} bytes, header promises {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols).copy()


def read_idx_labels(path: str | Path) -> np.ndarray:
    """Raw (N,) uint8 label array from an IDX label file."""
    raw = Path(path).read_bytes()
    magic = _read_be32(raw, 0, str(path))
    if magic != IDX_LABEL_MAGIC:
        raise DatasetFormatError(f"{path}: bad label magic {magic} (expected {IDX_LABEL_MAGIC})")
    count = _read_be32(raw, 4, str(path))
    payload = raw[8:]
    if len(payload) != count:
        raise DatasetFormatError(f"{path}: payload holds {len(payload)} labels, header promises {count}")
    return np.frombuffer(payload, dtype=np.uint8).copy()


def write_idx_images(path: str | Path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (N, rows, cols) uint8")
    n, r, c = images.shape
    atomic_write_bytes(path, struct.pack(">iiii", IDX_IMAGE_MAGIC, n, r, c) + images.tobytes(order="C"))


def write_idx_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError("labels must be 1-D uint8")
    atomic_write_bytes(path, struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes(order="C"))


def load_idx_dataset(
    images_path: str | Path,
    labels_path: str | Path,
    sizes: dict[str, int] | None = None,
    classes: int | None = None,
) -> LabeledDataset:
    """IDX image/label pair as a LabeledDataset.

    Pixels are scaled to [0, 1]; stored labels 0..c-1 are shifted to 1..c.
    When `sizes` is given, tags are assigned sequentially (train first); the
    sizes must sum to at most the file's sample count and the dataset is
    truncated to that sum. Without `sizes`, every sample is tagged "train".
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64) + 1
    if sizes is not None:
        total = sum(int(v) for v in sizes.values())
        if total > X.shape[0]:
            raise ValueError(f"split sizes sum to {total} but only {X.shape[0]} samples are available")
        X, y = X[:total], y[:total]
        tags = split_codes(sizes)
    else:
        tags = np.zeros(X.shape[0], dtype=np.uint8)
    c = int(classes) if classes is not None else (int(y.max()) if len(y) else 2)
    return LabeledDataset(X=X, y=y, c=max(c, 2), split=tags)
