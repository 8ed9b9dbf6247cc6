"""Experiment configuration: a flat `key = value` file with full defaults.

Every knob of the pipeline lives here. Unknown keys are rejected, values keep
their given spelling when echoed, and thresholds like 2/3 stay exact
fractions. The default profile is the desk-scale setup: a synthetic 3-class
task in 16 dimensions with three small, differently-shaped sub-models.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .data import SPLITS
from .sensitivity import SelectionConfig


class ConfigError(ValueError):
    pass


# defaults double as the canonical key order for the echoed config
DEFAULTS: dict[str, str] = {
    "seed": "7",
    "dataset.kind": "synthetic",  # synthetic | idx
    "dataset.classes": "3",
    "dataset.dim": "16",
    "dataset.spread": "0.3",
    "dataset.images": "",  # idx only
    "dataset.labels": "",  # idx only
    "split.train": "1200",
    "split.validation": "200",
    "split.test": "800",
    "split.mimic-attack": "400",
    "split.real-attack": "400",
    "ensemble.size": "3",
    "ensemble.hidden": "24 | 16 | 32",
    "ensemble.activation": "relu",
    "train.lr": "0.001",
    "train.batch": "64",
    "train.epochs": "40",
    "train.optimizer": "adam",
    "attack.kind": "MF",  # MF | MC+MF
    "attack.suite_size": "6",
    "attack.epochs_min": "2",
    "attack.epochs_max": "6",
    "attack.lr": "0.005",
    "attack.prune_min": "0.01",
    "attack.prune_max": "0.3",
    "candidates.strategy": "keyed-random",  # keyed-random | unrelated
    "candidates.count": "2000",
    "candidates.key": "change-this-secret",
    "candidates.source": "",  # unrelated only: IDX or .npy path
    "select.alpha": "2/3",
    "select.beta": "2/3",
    "fingerprint.epsilon": "0.01",
    "fingerprint.min_size": "10",
    "realism.band_pts": "2.0",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat key = value lines; blank lines and full-line # comments ignored."""
    result: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in result:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        result[key] = value.strip()
    return result


def _parse_hidden(value: str, n: int) -> tuple[tuple[int, ...], ...]:
    """'24 | 16,12 | 32' -> ((24,), (16, 12), (32,)); one group may serve all."""
    groups = []
    for group in value.split("|"):
        group = group.strip()
        widths = tuple(int(w) for w in group.split(",") if w.strip()) if group else ()
        groups.append(widths)
    if len(groups) == 1:
        groups = groups * n
    if len(groups) != n:
        raise ConfigError(f"ensemble.hidden lists {len(groups)} architectures for {n} sub-models")
    return tuple(groups)


@dataclass
class ExperimentConfig:
    seed: int
    dataset_kind: str
    classes: int
    dim: int
    spread: float
    images_path: str
    labels_path: str
    split_sizes: dict[str, int]
    n: int
    hidden: tuple[tuple[int, ...], ...]
    activation: str
    train_lr: float
    train_batch: int
    train_epochs: int
    train_optimizer: str
    attack_kind: str
    suite_size: int
    attack_epochs_min: int
    attack_epochs_max: int
    attack_lr: float
    prune_bounds: tuple[float, float]
    candidate_strategy: str
    candidate_count: int
    candidate_key: str
    candidate_source: str
    selection: SelectionConfig
    epsilon: float
    fingerprint_min_size: int
    realism_band_pts: float
    raw: dict[str, str]

    @classmethod
    def from_mapping(cls, mapping: dict[str, str], source: str = "<config>") -> "ExperimentConfig":
        unknown = sorted(set(mapping) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{source}: unknown keys {unknown}")
        raw = dict(DEFAULTS)
        raw.update(mapping)

        def geti(key: str) -> int:
            try:
                return int(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{source}: {key} must be an integer, got {raw[key]!r}") from exc

        def getf(key: str) -> float:
            try:
                return float(Fraction(raw[key]))
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"{source}: {key} must be numeric, got {raw[key]!r}") from exc

        n = geti("ensemble.size")
        if n < 1:
            raise ConfigError(f"{source}: ensemble.size must be >= 1")
        split_sizes = {tag: geti(f"split.{tag}") for tag in SPLITS}
        if any(v < 0 for v in split_sizes.values()):
            raise ConfigError(f"{source}: split sizes must be non-negative")

        kind = raw["dataset.kind"]
        if kind not in ("synthetic", "idx"):
            raise ConfigError(f"{source}: dataset.kind must be synthetic or idx")
        if kind == "idx" and (not raw["dataset.images"] or not raw["dataset.labels"]):
            raise ConfigError(f"{source}: idx datasets need dataset.images and dataset.labels")

        attack_kind = raw["attack.kind"]
        if attack_kind not in ("MF", "MC+MF"):
            raise ConfigError(f"{source}: attack.kind must be MF or MC+MF")
        suite_size = geti("attack.suite_size")
        if suite_size < 1:
            raise ConfigError(f"{source}: attack.suite_size must be >= 1")
        emin, emax = geti("attack.epochs_min"), geti("attack.epochs_max")
        if emax > 0 and not 1 <= emin <= emax:
            raise ConfigError(f"{source}: need 1 <= attack.epochs_min <= attack.epochs_max")

        strategy = raw["candidates.strategy"]
        if strategy not in ("keyed-random", "unrelated"):
            raise ConfigError(f"{source}: candidates.strategy must be keyed-random or unrelated")
        if strategy == "unrelated" and not raw["candidates.source"]:
            raise ConfigError(f"{source}: unrelated candidates need candidates.source")

        try:
            selection = SelectionConfig.parse(raw["select.alpha"], raw["select.beta"])
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{source}: bad selection thresholds: {exc}") from exc

        epsilon = getf("fingerprint.epsilon")
        if not 0.0 <= epsilon < 1.0:
            raise ConfigError(f"{source}: fingerprint.epsilon must lie in [0, 1)")

        prune_bounds = (getf("attack.prune_min"), getf("attack.prune_max"))
        if not 0.0 <= prune_bounds[0] <= prune_bounds[1] <= 1.0:
            raise ConfigError(f"{source}: prune bounds must satisfy 0 <= min <= max <= 1")

        return cls(
            seed=geti("seed"),
            dataset_kind=kind,
            classes=geti("dataset.classes"),
            dim=geti("dataset.dim"),
            spread=getf("dataset.spread"),
            images_path=raw["dataset.images"],
            labels_path=raw["dataset.labels"],
            split_sizes=split_sizes,
            n=n,
            hidden=_parse_hidden(raw["ensemble.hidden"], n),
            activation=raw["ensemble.activation"],
            train_lr=getf("train.lr"),
            train_batch=geti("train.batch"),
            train_epochs=geti("train.epochs"),
            train_optimizer=raw["train.optimizer"],
            attack_kind=attack_kind,
            suite_size=suite_size,
            attack_epochs_min=geti("attack.epochs_min"),
            attack_epochs_max=geti("attack.epochs_max"),
            attack_lr=getf("attack.lr"),
            prune_bounds=prune_bounds,
            candidate_strategy=strategy,
            candidate_count=geti("candidates.count"),
            candidate_key=raw["candidates.key"],
            candidate_source=raw["candidates.source"],
            selection=selection,
            epsilon=epsilon,
            fingerprint_min_size=geti("fingerprint.min_size"),
            realism_band_pts=getf("realism.band_pts"),
            raw=raw,
        )

    def to_text(self) -> str:
        """Effective config in canonical key order, suitable for echoing."""
        lines = ["# effective votemark configuration"]
        for key in DEFAULTS:
            lines.append(f"{key} = {self.raw[key]}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **raw_overrides: str) -> "ExperimentConfig":
        updated = dict(self.raw)
        updated.update({k: str(v) for k, v in raw_overrides.items()})
        return ExperimentConfig.from_mapping(updated)


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentConfig.from_mapping(parse_config_text(text, source=str(path)), source=str(path))


def default_config() -> ExperimentConfig:
    return ExperimentConfig.from_mapping({})
