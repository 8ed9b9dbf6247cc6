"""From-scratch feed-forward classifiers with bit-deterministic training.

Everything runs in float64. Training is a plain minibatch loop (Adam or SGD)
whose only randomness comes from one seeded generator, so identical
(data, architecture, config) always reproduce identical parameters, and a
serialized model reloads to the exact same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .util import atomic_write_bytes, container_bytes, parse_container, sha256_bytes

ACTIVATIONS = ("relu", "tanh")
OPTIMIZERS = ("adam", "sgd")


class TrainingDivergedError(RuntimeError):
    """Non-finite loss during training; hyperparameters are off the rails."""


@dataclass(frozen=True)
class Architecture:
    """Layer plan for a small MLP: input_dim -> hidden... -> classes."""

    input_dim: int
    hidden: tuple[int, ...]
    classes: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.classes < 2:
            raise ValueError("need input_dim >= 1 and classes >= 2")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.classes)

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "classes": self.classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            classes=int(d["classes"]),
            activation=str(d["activation"]),
        )


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 10
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward_scores(weights: list[np.ndarray], biases: list[np.ndarray], activation: str, X: np.ndarray) -> np.ndarray:
    a = X
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        a = a @ w + b
        if l < last:
            a = _activate(a, activation)
    return a


def _loss_and_grad_raw(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    activation: str,
    X: np.ndarray,
    y: np.ndarray,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean softmax cross-entropy plus backprop gradients, on raw parameters."""
    m = X.shape[0]
    acts = [X]
    zs = []
    a = X
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        zs.append(z)
        a = _activate(z, activation) if l < last else z
        acts.append(a)

    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(m), y - 1].mean())

    g = np.exp(log_probs)
    g[np.arange(m), y - 1] -= 1.0
    g /= m

    dWs: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * len(biases)  # type: ignore[list-item]
    for l in range(last, -1, -1):
        dWs[l] = acts[l].T @ g
        dbs[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ weights[l].T) * _activate_grad(zs[l - 1], activation)
    return loss, dWs, dbs


class SubModel:
    """Immutable trained classifier; inference is a pure function of (params, x)."""

    def __init__(self, arch: Architecture, weights: list[np.ndarray], biases: list[np.ndarray], provenance: dict):
        sizes = arch.layer_sizes
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise ValueError("parameter list does not match architecture depth")
        self.arch = arch
        self.weights = []
        self.biases = []
        for l, (w, b) in enumerate(zip(weights, biases)):
            w = np.array(w, dtype=np.float64, order="C")
            b = np.array(b, dtype=np.float64, order="C")
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l}: parameter shape mismatch")
            w.flags.writeable = False
            b.flags.writeable = False
            self.weights.append(w)
            self.biases.append(b)
        self.provenance = dict(provenance)

    @property
    def d(self) -> int:
        return self.arch.input_dim

    @property
    def c(self) -> int:
        return self.arch.classes

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"input has dimension {X.shape[-1]}, model expects {self.d}")
        return X

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Raw class scores (m, c); argmax of a row is the predicted label - 1."""
        return _forward_scores(self.weights, self.biases, self.arch.activation, self._check_input(X))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Labels in 1..c; score ties resolve to the lowest class index."""
        return np.argmax(self.scores(X), axis=1).astype(np.int64) + 1

    def predict(self, x: np.ndarray) -> int:
        return int(self.predict_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def flat_params(self) -> np.ndarray:
        """All parameters as one vector, layer by layer (W then b)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch: Architecture, flat: np.ndarray, provenance: dict) -> "SubModel":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.param_count,):
            raise ValueError(f"expected {arch.param_count} parameters, got {flat.size}")
        sizes = arch.layer_sizes
        weights, biases, off = [], [], 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[off : off + a * b].reshape(a, b))
            off += a * b
            biases.append(flat[off : off + b])
            off += b
        return cls(arch, weights, biases, provenance)

    def with_params(self, weights: list[np.ndarray], biases: list[np.ndarray], event: dict) -> "SubModel":
        """New model with replaced parameters and a provenance event appended."""
        prov = dict(self.provenance)
        prov["lineage"] = list(prov.get("lineage", [])) + [event]
        return SubModel(self.arch, weights, biases, prov)

    def to_bytes(self) -> bytes:
        header = {"format": 1, "arch": self.arch.to_dict(), "provenance": self.provenance}
        return container_bytes("model", header, [("params", self.flat_params())])

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<bytes>") -> "SubModel":
        header, blocks = parse_container(raw, kind="model", source=source)
        arch = Architecture.from_dict(header["arch"])
        return cls.from_flat(arch, blocks["params"], header.get("provenance", {}))

    def content_hash(self) -> str:
        return sha256_bytes(self.to_bytes())


def save_model(model: SubModel, path: str | Path) -> None:
    atomic_write_bytes(path, model.to_bytes())


def load_model(path: str | Path) -> SubModel:
    return SubModel.from_bytes(Path(path).read_bytes(), source=str(path))


def init_model(arch: Architecture, seed: int) -> SubModel:
    """Glorot-uniform weights, zero biases, drawn from one seeded generator."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        biases.append(np.zeros(b))
    return SubModel(arch, weights, biases, {"seed": int(seed), "trained": False})


def loss_and_grad(model: SubModel, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Training loss and analytic gradients at the model's parameters.

    Returns (loss, dWs, dbs) with gradients in model layer order; labels are
    1..c. This is the exact quantity the training loop descends, exposed so
    gradients can be checked against finite differences.
    """
    X = model._check_input(X)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be 1-D and match the batch")
    return _loss_and_grad_raw(model.weights, model.biases, model.arch.activation, X, y)


def _fit_params(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    activation: str,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Shared minibatch loop. Shuffle order is drawn from cfg.seed only."""
    weights = [np.array(w, dtype=np.float64) for w in weights]
    biases = [np.array(b, dtype=np.float64) for b in biases]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(cfg.seed) & 0xFFFFFFFF, 0x5A5A]))
    n = X.shape[0]
    params = weights + biases
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0

    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, dWs, dbs = _loss_and_grad_raw(weights, biases, activation, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss} at step {t}")
            grads = dWs + dbs
            t += 1
            if cfg.optimizer == "adam":
                for p, g, mm, vv in zip(params, grads, adam_m, adam_v):
                    mm += (1 - beta1) * (g - mm)
                    vv += (1 - beta2) * (g * g - vv)
                    p -= cfg.lr * (mm / (1 - beta1**t)) / (np.sqrt(vv / (1 - beta2**t)) + eps)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.lr * g
    return weights, biases


def fit(X: np.ndarray, y: np.ndarray, arch: Architecture, cfg: TrainConfig) -> SubModel:
    """Train a fresh model on (X, y). Bit-deterministic given cfg.seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty (N, d) matrix")
    if X.shape[1] != arch.input_dim:
        raise ValueError(f"data has dimension {X.shape[1]}, architecture expects {arch.input_dim}")
    if y.max(initial=1) > arch.classes or y.min(initial=1) < 1:
        raise ValueError("labels must lie in 1..classes of the architecture")
    seed_model = init_model(arch, cfg.seed)
    weights, biases = _fit_params(seed_model.weights, seed_model.biases, arch.activation, X, y, cfg)
    prov = {"seed": int(cfg.seed), "trained": True, "config": cfg.to_dict(), "n_samples": int(X.shape[0])}
    return SubModel(arch, weights, biases, prov)


def train(data: LabeledDataset, arch: Architecture, cfg: TrainConfig, split: str = "train") -> SubModel:
    """Train on one split of a LabeledDataset (the usual entry point)."""
    X, y = data.subset(split)
    if X.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    if data.c != arch.classes:
        raise ValueError(f"dataset has {data.c} classes, architecture outputs {arch.classes}")
    return fit(X, y, arch, cfg)


def continue_training(model: SubModel, X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> SubModel:
    """Further epochs starting from an existing model; the input is untouched.

    Optimizer state starts fresh, as is usual when resuming from a snapshot.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("fine-tuning data must be non-empty")
    if X.shape[1] != model.d:
        raise ValueError(f"data has dimension {X.shape[1]}, model expects {model.d}")
    weights, biases = _fit_params(model.weights, model.biases, model.arch.activation, X, y, cfg)
    event = {"op": "fine-tune", "config": cfg.to_dict(), "n_samples": int(X.shape[0])}
    return model.with_params(weights, biases, event)


def evaluate_accuracy(model, data: LabeledDataset, split: str = "test") -> float:
    """Fraction of correct predictions on one split; model is anything exposing
    predict_batch (sub-model or ensemble)."""
    X, y = data.subset(split)
    if X.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    return float((model.predict_batch(X) == y).mean())
