"""Sensitivity scoring and sensitive-sample selection.

For each candidate x and each sub-model i with attacked variants A_i, the
sensitivity score is one minus the agreement fraction:

    rho_i(x) = 1 - #{ j : variant_j(x) == base_i(x) } / |A_i|
             = (number of variants disagreeing with base_i on x) / |A_i|.

A candidate's bit vector sets bit i when rho_i >= alpha, and the candidate is
selected when its bit vector's Hamming weight reaches beta * n. Both
comparisons run in exact rational arithmetic: rho_i is the fraction
disagreements/|A_i| and alpha, beta are Fractions, so threshold boundaries
like rho = alpha = 2/3 never drift through floating point.

Selected candidates whose majority vote under the protected ensemble is tied
are excluded afterwards (a tied vote has no stable expected label), with the
exclusion reported separately so selection counts stay comparable across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .attacks import AttackSuite
from .ensemble import EnsembleModel
from .util import atomic_write_text


@dataclass(frozen=True)
class SelectionConfig:
    """Thresholds alpha (per-model bit) and beta (Hamming weight), in (0, 1]."""

    alpha: Fraction
    beta: Fraction

    def __post_init__(self) -> None:
        for name, value in (("alpha", self.alpha), ("beta", self.beta)):
            if not isinstance(value, Fraction):
                raise TypeError(f"{name} must be a Fraction (use SelectionConfig.parse)")
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")

    @classmethod
    def parse(cls, alpha: str | float | Fraction, beta: str | float | Fraction) -> "SelectionConfig":
        """Accepts "2/3", decimals, or Fractions; strings stay exact."""
        return cls(alpha=_to_fraction(alpha), beta=_to_fraction(beta))


def _to_fraction(value: str | float | Fraction) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value).limit_denominator(10**9)


@dataclass(frozen=True)
class SensitivityProfile:
    """Per-candidate record: scores, bit vector, threshold verdict, vote tie."""

    index: int
    rho: tuple[Fraction, ...]
    bits: tuple[int, ...]
    selected: bool  # Hamming weight reached beta*n
    tie: bool  # ensemble vote on this candidate is tied

    @property
    def hamming(self) -> int:
        return sum(self.bits)

    @property
    def kept(self) -> bool:
        """In the final sensitive set: passed the threshold and vote untied."""
        return self.selected and not self.tie


def sensitivity_score(base, suite: AttackSuite, x: np.ndarray) -> Fraction:
    """Fraction of suite members whose label on x differs from the base model's."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    base_label = int(base.predict_batch(x)[0])
    disagree = sum(1 for member in suite.members if int(member.predict_batch(x)[0]) != base_label)
    return Fraction(disagree, len(suite))


def bit_vector(rhos, alpha) -> tuple[int, ...]:
    """Bit i = 1 iff rho_i >= alpha; the boundary itself sets the bit."""
    return tuple(1 if rho >= alpha else 0 for rho in rhos)


def _candidate_matrix(candidates) -> np.ndarray:
    samples = getattr(candidates, "samples", candidates)
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("candidates must form a non-empty (m, d) matrix")
    return X


def _check_alignment(models, suites) -> None:
    if len(suites) != len(models):
        raise ValueError(f"{len(models)} models but {len(suites)} suites")
    for i, (model, suite) in enumerate(zip(models, suites)):
        if len(suite) == 0:
            raise ValueError(f"suite {i + 1} is empty")
        if suite.base_index is not None and suite.base_index != i + 1:
            raise ValueError(f"suite at position {i + 1} was built for sub-model {suite.base_index}")
        base_hash = getattr(model, "content_hash", None)
        if suite.base_sha256 is not None and base_hash is not None and suite.base_sha256 != base_hash():
            raise ValueError(f"suite {i + 1} was not derived from the model at position {i + 1}")


def select_sensitive(
    candidates,
    models,
    suites,
    cfg: SelectionConfig,
    ensemble: EnsembleModel,
) -> tuple[np.ndarray, list[SensitivityProfile]]:
    """Score every candidate and return (sensitive samples, all profiles).

    The sensitive set keeps candidates, in input order, whose bit-vector
    Hamming weight reaches beta*n and whose ensemble vote is not tied. A
    profile is emitted for every candidate regardless of the outcome.
    """
    X = _candidate_matrix(candidates)
    models = list(models)
    suites = list(suites)
    _check_alignment(models, suites)
    n = len(models)

    base_labels = np.stack([m.predict_batch(X) for m in models])  # (n, m)
    disagree = np.zeros((n, X.shape[0]), dtype=np.int64)
    for i, suite in enumerate(suites):
        for member in suite.members:
            disagree[i] += member.predict_batch(X) != base_labels[i]

    _, _, ties = ensemble.vote_batch(X)

    profiles: list[SensitivityProfile] = []
    keep = np.zeros(X.shape[0], dtype=bool)
    need = cfg.beta * n
    for k in range(X.shape[0]):
        rho = tuple(Fraction(int(disagree[i, k]), len(suites[i])) for i in range(n))
        bits = bit_vector(rho, cfg.alpha)
        selected = sum(bits) >= need
        tie = bool(ties[k])
        profiles.append(SensitivityProfile(index=k, rho=rho, bits=bits, selected=selected, tie=tie))
        keep[k] = selected and not tie
    return X[keep].copy(), profiles


def selection_counts(profiles) -> dict[str, int]:
    """Tallies for reporting: threshold passes, tie exclusions, final keeps."""
    passed = sum(1 for p in profiles if p.selected)
    excluded = sum(1 for p in profiles if p.selected and p.tie)
    return {
        "candidates": len(profiles),
        "passed_threshold": passed,
        "excluded_for_tie": excluded,
        "selected": passed - excluded,
    }


def dump_profiles(profiles, path: str | Path) -> None:
    """One CSV row per candidate: index, rho vector, bits, selected, tie.

    Scores are written as exact fractions ("4/6") so the dump carries the same
    information the selection saw.
    """
    lines = []
    writer_rows = [["index", "rho", "bits", "selected", "tie"]]
    for p in profiles:
        writer_rows.append(
            [
                str(p.index),
                ";".join(f"{r.numerator}/{r.denominator}" for r in p.rho),
                "".join(str(b) for b in p.bits),
                str(int(p.selected)),
                str(int(p.tie)),
            ]
        )
    for row in writer_rows:
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_profiles(path: str | Path) -> list[SensitivityProfile]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    profiles = []
    for row in rows[1:]:
        rho = tuple(Fraction(part) for part in row[1].split(";"))
        profiles.append(
            SensitivityProfile(
                index=int(row[0]),
                rho=rho,
                bits=tuple(int(ch) for ch in row[2]),
                selected=bool(int(row[3])),
                tie=bool(int(row[4])),
            )
        )
    return profiles
