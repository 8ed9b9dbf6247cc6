"""Candidate pools from which sensitive samples are mined.

Two strategies: keyed random vectors (per-entry uniform on [0, 1), regenerable
only with the secret key) and meaningful images from a dataset unrelated to
the protected task, reshaped to the model's input dimension. Either way the
pool must be much larger than the fingerprint drawn from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import read_idx_images
from .util import key_fingerprint, key_to_seed, sha256_bytes

POOL_MARGIN = 10  # pool must be at least this many times the requested fingerprint size


@dataclass
class CandidateSet:
    """Immutable (m, d) pool of candidate inputs in [0, 1], plus its recipe."""

    samples: np.ndarray
    descriptor: dict

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise ValueError("candidates must form a non-empty (m, d) matrix")
        if not np.isfinite(self.samples).all():
            raise ValueError("candidates must be finite")
        if self.samples.min() < 0.0 or self.samples.max() > 1.0:
            raise ValueError("candidates must lie in [0, 1]")
        seen = set()
        for i in range(self.samples.shape[0]):
            row = self.samples[i].tobytes()
            if row in seen:
                raise ValueError(f"duplicate candidate at index {i}; a degenerate pool cannot be fingerprinted")
            seen.add(row)
        self.samples.flags.writeable = False

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def content_hash(self) -> str:
        return sha256_bytes(self.samples.tobytes())


def ensure_pool_margin(pool_size: int, requested_fingerprint_size: int) -> None:
    """Enforce pool >= POOL_MARGIN x requested fingerprint size."""
    if pool_size < POOL_MARGIN * requested_fingerprint_size:
        raise ValueError(
            f"candidate pool of {pool_size} is too small for a fingerprint of "
            f"{requested_fingerprint_size} (need at least {POOL_MARGIN}x)"
        )


def generate_random_candidates(key: str | bytes | int, count: int, d: int) -> CandidateSet:
    """`count` i.i.d. uniform vectors on [0, 1)^d from a key-derived PRNG.

    The same key always regenerates the identical pool; without the key the
    pool (and therefore the fingerprint) cannot be reconstructed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    rng = np.random.default_rng(key_to_seed(key))
    samples = rng.random((count, d))
    descriptor = {
        "strategy": "keyed-random",
        "count": int(count),
        "dim": int(d),
        "key_sha256": key_fingerprint(key),
    }
    return CandidateSet(samples=samples, descriptor=descriptor)


def _reduce_channels(images: np.ndarray) -> tuple[np.ndarray, str]:
    if images.ndim == 4:  # (N, h, w, ch)
        return images.mean(axis=3), "average"
    return images, "none"


def _crop_or_pad(images: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Center-crop, then zero-pad, each spatial axis to the target size."""
    n, h, w = images.shape
    if h > target_h:
        top = (h - target_h) // 2
        images = images[:, top : top + target_h, :]
    if w > target_w:
        left = (w - target_w) // 2
        images = images[:, :, left : left + target_w]
    h, w = images.shape[1], images.shape[2]
    if h < target_h or w < target_w:
        pad_h, pad_w = target_h - h, target_w - w
        images = np.pad(
            images,
            ((0, 0), (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)),
        )
    return images


def fit_to_dim(source: np.ndarray, d: int) -> tuple[np.ndarray, dict]:
    """Map source samples of any shape onto flat d-vectors.

    Color images are channel-averaged to gray. If d is a perfect square the
    spatial grid is center-cropped/zero-padded to (s, s); if d = 3*s*s a gray
    source is replicated across three channels instead. Any other d falls back
    to flatten-then-crop/pad. The applied rule is returned for the descriptor.
    """
    source = np.asarray(source, dtype=np.float64)
    n = source.shape[0]
    record: dict = {"source_shape": list(source.shape[1:])}

    side = int(np.sqrt(d))
    color_side = int(np.sqrt(d / 3)) if d % 3 == 0 else 0
    if source.ndim >= 3 and side * side == d:
        images, channel_rule = _reduce_channels(source)
        out = _crop_or_pad(images, side, side).reshape(n, d)
        record.update({"rule": "center-crop-pad", "channels": channel_rule, "target_shape": [side, side]})
    elif source.ndim == 3 and color_side and color_side * color_side * 3 == d:
        images = _crop_or_pad(source, color_side, color_side)
        out = np.repeat(images[..., None], 3, axis=3).reshape(n, d)
        record.update({"rule": "center-crop-pad", "channels": "replicate", "target_shape": [color_side, color_side, 3]})
    else:
        flat = source.reshape(n, -1)
        if flat.shape[1] >= d:
            out = flat[:, :d]
        else:
            out = np.pad(flat, ((0, 0), (0, d - flat.shape[1])))
        record.update({"rule": "flatten-crop-pad", "channels": "none", "target_shape": [d]})
    return np.ascontiguousarray(out), record


def _normalize_range(samples: np.ndarray, source_dtype: np.dtype) -> tuple[np.ndarray, str]:
    if np.issubdtype(source_dtype, np.integer):
        return samples / 255.0, "byte/255"
    lo, hi = samples.min(), samples.max()
    if lo >= 0.0 and hi <= 1.0:
        return samples, "identity"
    if hi == lo:
        return np.zeros_like(samples), "constant->0"
    return (samples - lo) / (hi - lo), "min-max"


def load_unrelated_candidates(path: str | Path, d: int, count: int, seed: int) -> CandidateSet:
    """Sample `count` images without replacement from an unrelated dataset.

    Accepts an IDX image file or an .npy array of samples. Images are fitted
    to dimension d and range-normalized into [0, 1]; the exact transform is
    recorded in the descriptor so the pool is regenerable from (path, seed).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    path = Path(path)
    if path.suffix == ".npy":
        source = np.load(path)
    else:
        source = read_idx_images(path)
    src_dtype = source.dtype
    if source.shape[0] < count:
        raise ValueError(f"source holds {source.shape[0]} samples, {count} requested")

    rng = np.random.default_rng(seed)
    chosen = rng.permutation(source.shape[0])[:count]
    fitted, transform = fit_to_dim(source[chosen], d)
    samples, norm_rule = _normalize_range(fitted, src_dtype)
    transform["normalize"] = norm_rule
    descriptor = {
        "strategy": "unrelated-dataset",
        "path": str(path),
        "count": int(count),
        "dim": int(d),
        "seed": int(seed),
        "transform": transform,
    }
    return CandidateSet(samples=samples, descriptor=descriptor)
