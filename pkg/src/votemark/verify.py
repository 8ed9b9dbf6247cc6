"""Fingerprint recording and black-box integrity verification.

A fingerprint is the selected sensitive set S, the protected ensemble's label
on each sample, and a tolerance epsilon. Verification feeds S to any
label-returning oracle, exactly once per sample in fingerprint order, and
declares the target tampered when the fraction of matching labels drops below
1 - epsilon (strict inequality: a match rate of exactly 1 - epsilon is still
intact). The verifier never looks inside the target, and recording a
fingerprint never modifies the protected ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .ensemble import EnsembleModel
from .models import evaluate_accuracy
from .util import atomic_write_bytes, container_bytes, parse_container


class TieError(ValueError):
    """A would-be fingerprint sample has a tied majority vote."""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"tied ensemble vote on sample indices {self.indices[:10]}"
                         + ("..." if len(self.indices) > 10 else ""))


class OracleFailure(RuntimeError):
    """The black-box oracle raised mid-verification; partial diffs are kept."""

    def __init__(self, index: int, partial_diffs, cause: BaseException):
        self.index = index
        self.partial_diffs = list(partial_diffs)
        self.queries_made = index
        super().__init__(f"oracle failed on sample {index}: {cause!r}")


@dataclass(frozen=True)
class Fingerprint:
    """Sensitive samples, their expected labels, epsilon, and provenance."""

    samples: np.ndarray  # (m, d) float64
    expected_labels: np.ndarray  # (m,) int32 in 1..c
    epsilon: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", np.ascontiguousarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "expected_labels", np.ascontiguousarray(self.expected_labels, dtype=np.int32))
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise ValueError("a fingerprint needs at least one sample")
        if self.expected_labels.shape != (self.samples.shape[0],):
            raise ValueError("one expected label per sample")
        if self.expected_labels.min() < 1:
            raise ValueError("labels must be >= 1")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        self.samples.flags.writeable = False
        self.expected_labels.flags.writeable = False

    def __len__(self) -> int:
        return self.samples.shape[0]

    def to_bytes(self) -> bytes:
        header = {"format": 1, "epsilon": self.epsilon, "metadata": self.metadata}
        return container_bytes(
            "fingerprint", header, [("samples", self.samples), ("labels", self.expected_labels)]
        )

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<bytes>") -> "Fingerprint":
        header, blocks = parse_container(raw, kind="fingerprint", source=source)
        return cls(
            samples=blocks["samples"],
            expected_labels=blocks["labels"],
            epsilon=float(header["epsilon"]),
            metadata=header.get("metadata", {}),
        )


def save_fingerprint(fp: Fingerprint, path: str | Path) -> None:
    atomic_write_bytes(path, fp.to_bytes())


def load_fingerprint(path: str | Path) -> Fingerprint:
    return Fingerprint.from_bytes(Path(path).read_bytes(), source=str(path))


def record_fingerprint(
    ensemble: EnsembleModel,
    samples: np.ndarray,
    epsilon: float = 0.01,
    metadata: dict | None = None,
) -> Fingerprint:
    """Label the sensitive set with the protected ensemble's own predictions.

    Every sample must be uniquely classified (no vote tie); the fingerprint is
    bound to the ensemble via its content hash. Recording reads the ensemble
    and writes nothing into it. Metadata is caller-extensible; a creation
    timestamp is deliberately NOT added by default so that re-recording the
    same ensemble yields byte-identical fingerprints.
    """
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("cannot record an empty fingerprint")
    winners, _, ties = ensemble.vote_batch(samples)
    if ties.any():
        raise TieError(np.flatnonzero(ties).tolist())
    meta = {
        "ensemble_hash": _maybe_hash(ensemble),
        "classes": ensemble.c,
        "dim": ensemble.d,
        "created": None,
    }
    if metadata:
        meta.update(metadata)
    return Fingerprint(samples=samples, expected_labels=winners.astype(np.int32), epsilon=float(epsilon), metadata=meta)


def _maybe_hash(ensemble) -> str | None:
    try:
        return ensemble.content_hash()
    except Exception:
        return None


@dataclass(frozen=True)
class VerificationReport:
    matches: int
    total: int
    verdict: str  # "intact" | "tampered"
    diffs: tuple[tuple[int, int, int], ...]  # (index, expected, observed)
    epsilon: float

    @property
    def match_rate(self) -> float:
        return self.matches / self.total

    @property
    def threshold(self) -> float:
        return 1.0 - self.epsilon

    def to_dict(self) -> dict:
        return {
            "matches": self.matches,
            "total": self.total,
            "match_rate": self.match_rate,
            "threshold": self.threshold,
            "epsilon": self.epsilon,
            "verdict": self.verdict,
            "diffs": [list(d) for d in self.diffs],
        }

    def to_text(self) -> str:
        lines = [
            f"samples checked : {self.total}",
            f"label matches   : {self.matches}",
            f"match rate      : {self.match_rate:.4f}",
            f"threshold (1-e) : {self.threshold:.4f}",
            f"verdict         : {self.verdict.upper()}",
        ]
        if self.diffs:
            lines.append(f"mismatches ({len(self.diffs)}):")
            for idx, exp, obs in self.diffs[:20]:
                lines.append(f"  sample {idx}: expected {exp}, observed {obs}")
            if len(self.diffs) > 20:
                lines.append(f"  ... {len(self.diffs) - 20} more")
        return "\n".join(lines) + "\n"


def _verdict(matches: int, total: int, epsilon: float) -> str:
    # exact rational comparison; the boundary match_rate == 1 - epsilon is intact
    tampered = Fraction(matches, total) < 1 - Fraction(epsilon)
    return "tampered" if tampered else "intact"


def verify_integrity(oracle, fp: Fingerprint) -> VerificationReport:
    """Query the black-box oracle once per fingerprint sample, in order.

    `oracle` is any callable mapping a d-vector to a label in 1..c. The
    verdict is tampered iff match_rate < 1 - epsilon (exact arithmetic).
    """
    c = fp.metadata.get("classes")
    diffs: list[tuple[int, int, int]] = []
    matches = 0
    for i in range(len(fp)):
        try:
            observed = int(oracle(fp.samples[i]))
        except Exception as exc:
            raise OracleFailure(i, diffs, exc) from exc
        if observed < 1 or (c is not None and observed > int(c)):
            raise OracleFailure(i, diffs, ValueError(f"oracle returned out-of-range label {observed}"))
        expected = int(fp.expected_labels[i])
        if observed == expected:
            matches += 1
        else:
            diffs.append((i, expected, observed))
    return VerificationReport(
        matches=matches,
        total=len(fp),
        verdict=_verdict(matches, len(fp), fp.epsilon),
        diffs=tuple(diffs),
        epsilon=fp.epsilon,
    )


def ensemble_oracle(ensemble: EnsembleModel):
    """Adapter presenting an in-process ensemble as a black-box label function."""

    def oracle(x: np.ndarray) -> int:
        return ensemble.predict(x)

    return oracle


@dataclass(frozen=True)
class SweepRow:
    attacked: tuple[bool, ...]  # which sub-models were substituted
    matches: int
    total: int
    verdict: str
    task_accuracy: float | None

    @property
    def match_rate(self) -> float:
        return self.matches / self.total

    @property
    def label(self) -> str:
        return "".join("A" if a else "-" for a in self.attacked)

    def to_dict(self) -> dict:
        return {
            "attacked": list(self.attacked),
            "label": self.label,
            "matches": self.matches,
            "total": self.total,
            "match_rate": self.match_rate,
            "verdict": self.verdict,
            "task_accuracy": self.task_accuracy,
        }


def attack_sweep(
    ensemble: EnsembleModel,
    attacked_variants,
    fp: Fingerprint,
    test_data=None,
    test_split: str = "test",
) -> list[SweepRow]:
    """Verify every non-empty combination of substituted attacked sub-models.

    `attacked_variants` provides one realized attacked variant per sub-model.
    The first returned row is the unattacked sanity row (it must verify
    intact); the remaining 2^n - 1 rows enumerate the attack combinations in
    binary order with sub-model 1 as the most significant position.
    """
    attacked_variants = list(attacked_variants)
    n = ensemble.n
    if len(attacked_variants) != n:
        raise ValueError(f"need one attacked variant per sub-model ({n}), got {len(attacked_variants)}")

    rows: list[SweepRow] = []
    for mask_bits in range(2**n):
        mask = tuple(bool(mask_bits >> (n - 1 - i) & 1) for i in range(n))
        subs = [attacked_variants[i] if mask[i] else ensemble.sub_models[i] for i in range(n)]
        target = EnsembleModel(subs)
        report = verify_integrity(ensemble_oracle(target), fp)
        acc = evaluate_accuracy(target, test_data, test_split) if test_data is not None else None
        rows.append(
            SweepRow(
                attacked=mask,
                matches=report.matches,
                total=report.total,
                verdict=report.verdict,
                task_accuracy=acc,
            )
        )
    return rows
