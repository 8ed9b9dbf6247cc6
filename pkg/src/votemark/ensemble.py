"""Majority-voting ensembles with explicit tie detection.

Each sub-model casts one vote; the class with the most votes wins. A tie
(two or more classes sharing the maximal count) is flagged, and the winner
among tied classes is the lowest class index. That deterministic policy keeps
recorded fingerprints reproducible; the fingerprinting pipeline additionally
refuses to record samples whose vote is tied at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import load_model, save_model
from .util import canonical_json, sha256_bytes, sha256_file, write_json, read_json

TIE_POLICY = "lowest-index"


@dataclass(frozen=True)
class VoteOutcome:
    winner: int
    counts: tuple[int, ...]
    tie: bool


class EnsembleModel:
    """Ordered, immutable collection of sub-models sharing (d, c)."""

    def __init__(self, sub_models):
        sub_models = tuple(sub_models)
        if not sub_models:
            raise ValueError("an ensemble needs at least one sub-model")
        d, c = sub_models[0].d, sub_models[0].c
        for i, m in enumerate(sub_models):
            if m.d != d or m.c != c:
                raise ValueError(f"sub-model {i + 1} has (d={m.d}, c={m.c}), expected (d={d}, c={c})")
        self.sub_models = sub_models
        self.tie_policy = TIE_POLICY

    @property
    def n(self) -> int:
        return len(self.sub_models)

    @property
    def d(self) -> int:
        return self.sub_models[0].d

    @property
    def c(self) -> int:
        return self.sub_models[0].c

    def vote_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(winners, counts, ties) for a batch; counts has shape (m, c).

        Results are combined by sub-model index, so the outcome is independent
        of any evaluation order.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        m = X.shape[0]
        counts = np.zeros((m, self.c), dtype=np.int64)
        rows = np.arange(m)
        for sub in self.sub_models:
            counts[rows, sub.predict_batch(X) - 1] += 1
        top = counts.max(axis=1)
        winners = counts.argmax(axis=1).astype(np.int64) + 1  # argmax = lowest tied index
        ties = (counts == top[:, None]).sum(axis=1) >= 2
        return winners, counts, ties

    def vote(self, x: np.ndarray) -> VoteOutcome:
        winners, counts, ties = self.vote_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))
        return VoteOutcome(winner=int(winners[0]), counts=tuple(int(v) for v in counts[0]), tie=bool(ties[0]))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return self.vote_batch(X)[0]

    def predict(self, x: np.ndarray) -> int:
        return self.vote(x).winner

    def content_hash(self) -> str:
        """Hash binding (d, c, tie policy, ordered sub-model contents)."""
        subs = [m.content_hash() for m in self.sub_models]
        return sha256_bytes(canonical_json({"d": self.d, "c": self.c, "tie_policy": self.tie_policy, "sub_models": subs}))


def ensemble_predict(ensemble: EnsembleModel, x: np.ndarray) -> VoteOutcome:
    """Majority vote of all sub-models on one sample."""
    return ensemble.vote(x)


def save_ensemble(ensemble: EnsembleModel, manifest_path: str | Path, model_dir: str = "models") -> str:
    """Write sub-models plus a manifest of ordered files and content hashes.

    Returns the ensemble content hash. Paths in the manifest are relative to
    the manifest's directory so the bundle can be moved as a unit.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    entries = []
    for i, sub in enumerate(ensemble.sub_models, start=1):
        rel = f"{model_dir}/sub_{i:02d}.mdl"
        save_model(sub, base / rel)
        entries.append({"path": rel, "sha256": sha256_file(base / rel)})
    manifest = {
        "format": 1,
        "kind": "ensemble-manifest",
        "d": ensemble.d,
        "c": ensemble.c,
        "tie_policy": ensemble.tie_policy,
        "sub_models": entries,
        "content_hash": ensemble.content_hash(),
    }
    write_json(manifest_path, manifest)
    return manifest["content_hash"]


def load_ensemble(manifest_path: str | Path) -> EnsembleModel:
    """Rebuild an ensemble from its manifest, verifying every content hash."""
    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    if manifest.get("kind") != "ensemble-manifest":
        raise ValueError(f"{manifest_path}: not an ensemble manifest")
    subs = []
    for entry in manifest["sub_models"]:
        path = manifest_path.parent / entry["path"]
        actual = sha256_file(path)
        if actual != entry["sha256"]:
            raise ValueError(f"{path}: content hash mismatch (file changed since the manifest was written)")
        subs.append(load_model(path))
    ensemble = EnsembleModel(subs)
    recorded = manifest.get("content_hash")
    if recorded is not None and recorded != ensemble.content_hash():
        raise ValueError(f"{manifest_path}: ensemble content hash mismatch")
    return ensemble
