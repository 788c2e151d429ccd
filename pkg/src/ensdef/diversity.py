"""Pairwise kappa diversity, ranked team enumeration, and team selection.

Kappa is the chance-corrected agreement between two models' label columns;
low kappa means high diversity. Candidate ensemble teams are every subset
within a size range whose average pairwise kappa falls at or below a
threshold, listed in ascending kappa order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, InputShapeError, NoEligibleTeamError, UndefinedKappaError

SELECTORS = ("all_examples", "disagreement_only")
STRATEGY_KINDS = ("rand", "rand_kappa", "best_kappa")


@dataclass
class ContingencyTable:
    """K-by-K label co-occurrence counts for one model pair."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InputShapeError("contingency counts must be a square matrix")
        if (counts < 0).any():
            raise InputShapeError("contingency counts must be non-negative")
        self.counts = counts.astype(np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_contingency(
    labels_a: Sequence[int],
    labels_b: Sequence[int],
    selector: str = "all_examples",
    n_classes: int | None = None,
) -> ContingencyTable:
    """Count label pairs over the selector-qualified examples.

    ``all_examples`` is the standard construction; ``disagreement_only``
    keeps only the examples the two models label differently.
    """
    if selector not in SELECTORS:
        raise ConfigError(f"unknown selector {selector!r}; expected one of {SELECTORS}")
    a = np.asarray(labels_a, dtype=int)
    b = np.asarray(labels_b, dtype=int)
    if a.shape != b.shape or a.ndim != 1:
        raise InputShapeError("label lists must be 1-D and of equal length")
    if n_classes is None:
        n_classes = int(max(a.max(initial=-1), b.max(initial=-1))) + 1
    if a.size and (a.min() < 0 or b.min() < 0 or a.max() >= n_classes or b.max() >= n_classes):
        raise InputShapeError(f"labels must lie in [0, {n_classes})")
    if selector == "disagreement_only":
        keep = a != b
        a, b = a[keep], b[keep]
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (a, b), 1)
    return ContingencyTable(counts)


def kappa(table: ContingencyTable, expected: str = "product") -> float:
    """Chance-corrected agreement of a contingency table, in [-1, 1].

    ``expected="product"`` uses the standard marginal-product chance
    agreement. ``expected="printed_difference"`` instead subtracts the two
    marginals before summing, a form that telescopes to zero and therefore
    reduces kappa to the raw observed agreement; it is kept only for
    comparison and is not the default.
    """
    n = table.total
    if n == 0:
        raise UndefinedKappaError("kappa is undefined for an empty qualified set")
    counts = table.counts.astype(float)
    p_o = float(np.trace(counts)) / n
    row = counts.sum(axis=1) / n
    col = counts.sum(axis=0) / n
    if expected == "product":
        p_e = float(np.dot(row, col))
    elif expected == "printed_difference":
        p_e = float(np.sum(row - col))
    else:
        raise ConfigError(f"unknown expected-agreement form {expected!r}")
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise UndefinedKappaError("kappa is undefined: chance agreement equals 1")
    return (p_o - p_e) / (1.0 - p_e)


def pairwise_kappa_matrix(
    label_columns: Mapping[str, Sequence[int]] | np.ndarray,
    selector: str = "all_examples",
    n_classes: int | None = None,
    expected: str = "product",
) -> tuple[list[str], np.ndarray]:
    """Symmetric pairwise kappa over aligned label columns.

    Accepts a mapping ``model_id -> labels`` or an ``(m, n)`` array (ids
    become row indices as strings). The diagonal and any undefined cell
    are marked ``nan``.
    """
    if isinstance(label_columns, Mapping):
        ids = list(label_columns.keys())
        columns = [np.asarray(label_columns[i], dtype=int) for i in ids]
    else:
        arr = np.asarray(label_columns, dtype=int)
        if arr.ndim != 2:
            raise InputShapeError("label columns must form an (m, n) array")
        ids = [str(i) for i in range(arr.shape[0])]
        columns = [arr[i] for i in range(arr.shape[0])]
    if len(columns) < 2:
        raise ConfigError("pairwise kappa needs at least two models")
    length = columns[0].shape[0]
    if any(c.shape != (length,) for c in columns):
        raise InputShapeError("all label columns must have equal length")
    if n_classes is None:
        n_classes = int(max(c.max(initial=-1) for c in columns)) + 1

    m = len(columns)
    matrix = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(i + 1, m):
            try:
                value = kappa(build_contingency(columns[i], columns[j], selector, n_classes), expected)
            except UndefinedKappaError:
                value = np.nan
            matrix[i, j] = matrix[j, i] = value
    return ids, matrix


@dataclass(frozen=True)
class RankedTeam:
    members: tuple[str, ...]
    avg_kappa: float


@dataclass
class KappaRankedList:
    """Teams whose average pairwise kappa is at or below the threshold,
    sorted ascending (ties broken by member ids)."""

    teams: list[RankedTeam]
    threshold: float
    min_team_size: int

    def __len__(self) -> int:
        return len(self.teams)


def all_size_eligible_teams(model_ids: Sequence[str], min_size: int = 3, max_size: int | None = None) -> list[tuple[str, ...]]:
    """Every subset with size in [min_size, max_size], in deterministic order."""
    ids = list(model_ids)
    if max_size is None:
        max_size = len(ids)
    if not 1 <= min_size <= max_size <= len(ids):
        raise ConfigError("need 1 <= min_size <= max_size <= number of models")
    teams = []
    for size in range(min_size, max_size + 1):
        teams.extend(tuple(combo) for combo in itertools.combinations(ids, size))
    return teams


def enumerate_teams(
    model_ids: Sequence[str],
    kappa_matrix: np.ndarray,
    min_size: int = 3,
    max_size: int | None = None,
    threshold: float = 0.6,
    combination_cap: int = 200_000,
) -> KappaRankedList:
    """Score every subset in the size range by its mean pairwise kappa and
    keep those at or below the threshold, sorted ascending.

    Teams containing an undefined (nan) pair are skipped. Enumeration
    refuses to start when the total combination count exceeds
    ``combination_cap``.
    """
    ids = list(model_ids)
    matrix = np.asarray(kappa_matrix, dtype=float)
    if matrix.shape != (len(ids), len(ids)):
        raise InputShapeError("kappa matrix must be square over the model ids")
    if max_size is None:
        max_size = len(ids)
    if not 1 <= min_size <= max_size <= len(ids):
        raise ConfigError("need 1 <= min_size <= max_size <= number of models")
    total = sum(comb(len(ids), size) for size in range(min_size, max_size + 1))
    if total > combination_cap:
        raise ConfigError(
            f"{total} candidate teams exceed the enumeration cap of {combination_cap}; "
            "raise the cap or restrict the size range"
        )

    scored: list[RankedTeam] = []
    for size in range(min_size, max_size + 1):
        for combo in itertools.combinations(range(len(ids)), size):
            values = [matrix[i, j] for i, j in itertools.combinations(combo, 2)]
            if values and np.isnan(values).any():
                continue
            avg = float(np.mean(values)) if values else 0.0
            if avg <= threshold:
                scored.append(RankedTeam(members=tuple(ids[i] for i in combo), avg_kappa=avg))
    scored.sort(key=lambda team: (team.avg_kappa, team.members))
    return KappaRankedList(teams=scored, threshold=threshold, min_team_size=min_size)


@dataclass(frozen=True)
class TeamStrategy:
    """How a team is drawn: uniformly from the whole pool (``rand``),
    uniformly from the ranked list (``rand_kappa``), or the ranked-list
    member with the highest held-out accuracy (``best_kappa``)."""

    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}; expected one of {STRATEGY_KINDS}")


def select_team(
    ranked: KappaRankedList,
    strategy: TeamStrategy,
    all_teams: Sequence[tuple[str, ...]] | None = None,
    holdout_accuracy: Mapping[tuple[str, ...], float] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[str, ...]:
    """Draw one team according to the strategy.

    ``best_kappa`` ties resolve by lower average kappa, then by member ids.
    """
    if rng is None:
        rng = np.random.default_rng(strategy.seed)
    if strategy.kind == "rand":
        if not all_teams:
            raise NoEligibleTeamError("rand strategy needs the pool of size-eligible teams")
        return tuple(all_teams[int(rng.integers(len(all_teams)))])
    if not ranked.teams:
        raise NoEligibleTeamError("the kappa-ranked list is empty")
    if strategy.kind == "rand_kappa":
        return ranked.teams[int(rng.integers(len(ranked.teams)))].members
    # best_kappa
    if not holdout_accuracy:
        raise ConfigError("best_kappa requires per-team holdout accuracies")
    try:
        best = min(
            ranked.teams,
            key=lambda team: (-holdout_accuracy[team.members], team.avg_kappa, team.members),
        )
    except KeyError as exc:
        raise ConfigError(f"missing holdout accuracy for team {exc.args[0]}") from exc
    return best.members
