"""Prediction combination: soft voting, strict majority, binomial boost.

Argmax ties resolve to the lowest class index, consistent with the rest
of the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, InputShapeError, InputValidationError
from .nncore import Network

PROBABILITY_SUM_TOL = 1e-6


def _check_probability_vector(p: np.ndarray, name: str = "prediction") -> np.ndarray:
    vec = np.asarray(p, dtype=float)
    if vec.ndim != 1 or vec.size < 1:
        raise InputShapeError(f"{name} must be a non-empty vector")
    if (vec < -PROBABILITY_SUM_TOL).any():
        raise InputValidationError(f"{name} has negative entries")
    if abs(float(vec.sum()) - 1.0) > PROBABILITY_SUM_TOL:
        raise InputValidationError(f"{name} does not sum to 1 (got {vec.sum()!r})")
    return vec


@dataclass
class VotedPrediction:
    """Soft-vote outcome: label and confidence of the averaged vector."""

    label: int
    confidence: float
    per_member: list[np.ndarray]
    mean: np.ndarray


def soft_vote(predictions: Sequence[np.ndarray]) -> VotedPrediction:
    """Average the member probability vectors, then take the argmax."""
    if len(predictions) == 0:
        raise ConfigError("soft_vote needs at least one prediction vector")
    members = [_check_probability_vector(p) for p in predictions]
    width = members[0].size
    if any(m.size != width for m in members):
        raise InputShapeError("all prediction vectors must have the same length")
    mean = np.mean(members, axis=0)
    label = int(np.argmax(mean))
    return VotedPrediction(label=label, confidence=float(mean[label]), per_member=members, mean=mean)


def majority_vote(labels: Sequence[int]) -> int | None:
    """Strict-majority label, or None when no label exceeds half the votes."""
    if len(labels) == 0:
        raise ConfigError("majority_vote needs at least one label")
    counts: dict[int, int] = {}
    for label in labels:
        counts[int(label)] = counts.get(int(label), 0) + 1
    label, count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return label if count * 2 > len(labels) else None


def ensemble_boost(delta: float, z: int) -> float:
    """Probability that a majority of ``z`` independent voters, each correct
    with probability ``delta``, votes correctly: the exact binomial tail
    from ceil(z/2) to z. ``z`` must be odd so the majority is well defined.
    """
    if not isinstance(z, int) or z < 1:
        raise ConfigError("ensemble size must be a positive integer")
    if z % 2 == 0:
        raise ConfigError("ensemble size must be odd for a well-defined majority")
    if not 0.0 <= delta <= 1.0:
        raise ConfigError("delta must lie in [0, 1]")
    start = (z + 1) // 2
    return float(sum(comb(z, i) * delta**i * (1.0 - delta) ** (z - i) for i in range(start, z + 1)))


@dataclass
class VerifierPool:
    """Named classifier pool sharing input dimension and class count."""

    members: list[tuple[str, Network]]
    holdout_accuracy: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.members:
            raise ConfigError("a verifier pool needs at least one member")
        ids = [m[0] for m in self.members]
        if len(set(ids)) != len(ids):
            raise ConfigError("verifier ids must be unique")
        dims = {net.input_dim for _, net in self.members}
        outs = {net.output_dim for _, net in self.members}
        if len(dims) != 1 or len(outs) != 1:
            raise ConfigError("all pool members must share input dim and class count")

    @property
    def ids(self) -> list[str]:
        return [m[0] for m in self.members]

    def subset(self, ids: Sequence[str]) -> list[tuple[str, Network]]:
        lookup = dict(self.members)
        missing = [i for i in ids if i not in lookup]
        if missing:
            raise ConfigError(f"unknown verifier ids: {missing}")
        return [(i, lookup[i]) for i in ids]
