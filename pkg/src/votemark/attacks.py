"""Simulated real-world attacks on sub-models: fine-tuning (MF) and magnitude
pruning followed by fine-tuning (MC+MF).

Suites of attacked variants serve two roles: generated on the mimic-attack
split they drive sensitive-sample selection; generated on the disjoint
real-attack split they play the adversary during evaluation. Attacks never
touch their input model; every variant is a new object.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .models import SubModel, TrainConfig, continue_training, load_model, save_model
from .util import derive_seed, read_json, sha256_file, write_json

ATTACK_KINDS = ("MF", "MC+MF")
DEFAULT_PRUNE_BOUNDS = (0.01, 0.3)


@dataclass(frozen=True)
class AttackSpec:
    """Recipe for one attacked variant."""

    kind: str
    epochs: int
    seed: int
    split: str = "mimic-attack"
    prune_rate: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.split not in ("mimic-attack", "real-attack"):
            raise ValueError(f"attack split must be mimic-attack or real-attack, got {self.split!r}")
        if self.kind == "MC+MF":
            if self.prune_rate is None:
                raise ValueError("MC+MF requires a prune rate")
            if not 0.0 <= self.prune_rate <= 1.0:
                raise ValueError("prune rate must lie in [0, 1]")
        elif self.prune_rate is not None:
            raise ValueError("prune rate only applies to MC+MF")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epochs": self.epochs,
            "seed": self.seed,
            "split": self.split,
            "prune_rate": self.prune_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        return cls(
            kind=str(d["kind"]),
            epochs=int(d["epochs"]),
            seed=int(d["seed"]),
            split=str(d["split"]),
            prune_rate=None if d.get("prune_rate") is None else float(d["prune_rate"]),
        )


@dataclass(frozen=True)
class AttackSuite:
    """Attacked variants of one base sub-model, plus the specs that made them."""

    members: tuple[SubModel, ...]
    specs: tuple[AttackSpec, ...]
    base_index: int | None = None
    base_sha256: str | None = None

    def __post_init__(self) -> None:
        if len(self.members) < 1:
            raise ValueError("a suite needs at least one attacked variant")
        if len(self.members) != len(self.specs):
            raise ValueError("members and specs must align")
        d, c = self.members[0].d, self.members[0].c
        for m in self.members:
            if m.d != d or m.c != c:
                raise ValueError("all suite members must share (d, c)")

    def __len__(self) -> int:
        return len(self.members)


def fine_tune(
    model: SubModel,
    data: LabeledDataset,
    epochs: int,
    seed: int,
    split: str = "mimic-attack",
    lr: float = 0.001,
    batch_size: int = 64,
    optimizer: str = "adam",
) -> SubModel:
    """Train `epochs` further epochs on one split; returns a new model."""
    if epochs < 1:
        raise ValueError("fine-tuning needs at least 1 epoch")
    X, y = data.subset(split)
    if X.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    cfg = TrainConfig(lr=lr, batch_size=batch_size, epochs=epochs, optimizer=optimizer, seed=seed)
    return continue_training(model, X, y, cfg)


def prune_magnitude(model: SubModel, rate: float) -> SubModel:
    """Zero the floor(rate * W) weights of smallest absolute value.

    Ranking is global across layers; biases are exempt; magnitude ties break
    toward the lower flat parameter index. Unpruned weights are bit-identical
    to the input's.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("prune rate must lie in [0, 1]")
    flat_w = np.concatenate([w.ravel() for w in model.weights])
    k = int(np.floor(rate * flat_w.size))
    if k > 0:
        order = np.argsort(np.abs(flat_w), kind="stable")
        flat_w[order[:k]] = 0.0
    weights, off = [], 0
    for w in model.weights:
        weights.append(flat_w[off : off + w.size].reshape(w.shape))
        off += w.size
    event = {"op": "prune-magnitude", "rate": float(rate), "zeroed": k}
    return model.with_params(weights, list(model.biases), event)


def _identity_variant(model: SubModel, spec: AttackSpec) -> SubModel:
    # zero-epoch attack: parameters unchanged, lineage still recorded
    return model.with_params(list(model.weights), list(model.biases), {"op": "attack-identity", "spec": spec.to_dict()})


def _apply_spec(
    model: SubModel,
    spec: AttackSpec,
    data: LabeledDataset,
    lr: float,
    batch_size: int,
    optimizer: str,
) -> SubModel:
    out = model
    if spec.kind == "MC+MF":
        out = prune_magnitude(out, spec.prune_rate)
    if spec.epochs == 0:
        return _identity_variant(out, spec)
    return fine_tune(out, data, spec.epochs, spec.seed, split=spec.split, lr=lr, batch_size=batch_size, optimizer=optimizer)


def generate_attack_suite(
    model: SubModel,
    kind: str,
    count: int,
    data: LabeledDataset,
    seed: int,
    split: str = "mimic-attack",
    epochs_list: list[int] | None = None,
    epochs_min: int = 1,
    epochs_max: int = 6,
    prune_bounds: tuple[float, float] = DEFAULT_PRUNE_BOUNDS,
    lr: float = 0.001,
    batch_size: int = 64,
    optimizer: str = "adam",
    base_index: int | None = None,
) -> AttackSuite:
    """Mimic `count` attacked variants of one sub-model, reproducibly from `seed`.

    MF variants fine-tune for distinct epoch counts (1..count unless
    epochs_list overrides; an epoch count of 0 yields an identity variant).
    MC+MF variants draw a random prune rate from prune_bounds and a random
    epoch count in epochs_min..epochs_max, both from per-member seeded
    generators.
    """
    if count < 1:
        raise ValueError("suite size must be >= 1")
    if kind not in ATTACK_KINDS:
        raise ValueError(f"unknown attack kind {kind!r}")
    if epochs_list is not None and len(epochs_list) != count:
        raise ValueError("epochs_list must provide one entry per member")

    members, specs = [], []
    for j in range(1, count + 1):
        member_seed = derive_seed(seed, j)
        if kind == "MF":
            epochs = int(epochs_list[j - 1]) if epochs_list is not None else j
            spec = AttackSpec(kind="MF", epochs=epochs, seed=member_seed, split=split)
        else:
            rng = np.random.default_rng(member_seed)
            rate = float(rng.uniform(*prune_bounds))
            epochs = int(epochs_list[j - 1]) if epochs_list is not None else int(rng.integers(epochs_min, epochs_max + 1))
            spec = AttackSpec(kind="MC+MF", epochs=epochs, seed=member_seed, split=split, prune_rate=rate)
        members.append(_apply_spec(model, spec, data, lr, batch_size, optimizer))
        specs.append(spec)
    return AttackSuite(
        members=tuple(members),
        specs=tuple(specs),
        base_index=base_index,
        base_sha256=model.content_hash(),
    )


def realize_attack(
    model: SubModel,
    kind: str,
    data: LabeledDataset,
    seed: int,
    split: str = "real-attack",
    epochs_min: int = 1,
    epochs_max: int = 6,
    prune_bounds: tuple[float, float] = DEFAULT_PRUNE_BOUNDS,
    lr: float = 0.001,
    batch_size: int = 64,
    optimizer: str = "adam",
) -> tuple[SubModel, AttackSpec]:
    """One realized attack with seeded-random strength, on the real-attack split."""
    rng = np.random.default_rng(derive_seed(seed, 0xA77))
    if epochs_max < 1:
        epochs = 0
    else:
        epochs = int(rng.integers(max(epochs_min, 1), epochs_max + 1))
    if kind == "MF":
        spec = AttackSpec(kind="MF", epochs=epochs, seed=derive_seed(seed, 1), split=split)
    elif kind == "MC+MF":
        rate = float(rng.uniform(*prune_bounds))
        spec = AttackSpec(kind="MC+MF", epochs=epochs, seed=derive_seed(seed, 1), split=split, prune_rate=rate)
    else:
        raise ValueError(f"unknown attack kind {kind!r}")
    return _apply_spec(model, spec, data, lr, batch_size, optimizer), spec


def save_suite(suite: AttackSuite, dir_path: str | Path) -> None:
    """Persist members plus a manifest (base hash, per-member spec and hash)."""
    dir_path = Path(dir_path)
    entries = []
    for j, (member, spec) in enumerate(zip(suite.members, suite.specs), start=1):
        rel = f"m_{j:02d}.mdl"
        save_model(member, dir_path / rel)
        entries.append({"path": rel, "sha256": sha256_file(dir_path / rel), "spec": spec.to_dict()})
    write_json(
        dir_path / "suite.json",
        {
            "format": 1,
            "kind": "attack-suite-manifest",
            "base_index": suite.base_index,
            "base_sha256": suite.base_sha256,
            "members": entries,
        },
    )


def load_suite(dir_path: str | Path) -> AttackSuite:
    dir_path = Path(dir_path)
    manifest = read_json(dir_path / "suite.json")
    if manifest.get("kind") != "attack-suite-manifest":
        raise ValueError(f"{dir_path}: not an attack-suite manifest")
    members, specs = [], []
    for entry in manifest["members"]:
        path = dir_path / entry["path"]
        if sha256_file(path) != entry["sha256"]:
            raise ValueError(f"{path}: content hash mismatch")
        members.append(load_model(path))
        specs.append(AttackSpec.from_dict(entry["spec"]))
    return AttackSuite(
        members=tuple(members),
        specs=tuple(specs),
        base_index=manifest.get("base_index"),
        base_sha256=manifest.get("base_sha256"),
    )
