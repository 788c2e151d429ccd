"""Cross-layer defense pipelines and reference (single-stage) defenses.

Two cross-layer variants exist. One-to-many passes the majority-voted
denoised version of a query to the verification ensemble (the target model
may join the vote); a failed denoising majority flags the query. Many-to-
many averages the verifier predictions over every denoised version and
keeps the most confident one, flagging when the per-version labels have no
strict majority or the winning confidence falls below a floor.

Every outcome also records a counterfactual "would-be" label: the label
the pipeline would emit with detection disabled. For one-to-many that
counterfactual falls back to the most-confident cross-layer vote over all
denoised versions when the majority fails. The counterfactual makes the
detected/repairable bookkeeping of the defense metrics computable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .denoising import Denoiser, denoise, denoising_ensemble_decide
from .diversity import KappaRankedList, TeamStrategy, select_team
from .exceptions import ConfigError, InputShapeError, NoEligibleTeamError
from .nncore import Network, predict_proba
from .voting import VerifierPool, majority_vote, soft_vote

PIPELINE_VARIANTS = ("one_to_many", "many_to_many")
VOTE_KINDS = ("soft", "majority")

VERDICT_REPAIRED = "repaired"
VERDICT_DETECTED = "detected"
VERDICT_FOOLED = "fooled"


@dataclass
class DefenseOutcome:
    """Per-example defense result.

    At inference the verdict is either a prediction (label, confidence) or
    a detection flag. ``would_be_label`` is the counterfactual prediction
    with detection disabled; for unflagged examples it equals ``label``.
    ``verdict`` is filled in against ground truth by ``resolve_outcome``.
    """

    flagged: bool
    label: int | None
    confidence: float | None
    would_be_label: int
    would_be_confidence: float
    chosen_denoiser: str | None
    denoiser_team: tuple[str, ...]
    verifier_team: tuple[str, ...]
    true_label: int | None = None
    verdict: str | None = None


def resolve_outcome(outcome: DefenseOutcome, true_label: int) -> DefenseOutcome:
    """Assign the evaluated verdict: detected, repaired, or fooled."""
    outcome.true_label = int(true_label)
    if outcome.flagged:
        outcome.verdict = VERDICT_DETECTED
    elif outcome.label == int(true_label):
        outcome.verdict = VERDICT_REPAIRED
    else:
        outcome.verdict = VERDICT_FOOLED
    return outcome


def _vote(predictions: Sequence[np.ndarray], vote: str) -> tuple[int, float]:
    if vote == "soft":
        voted = soft_vote(predictions)
        return voted.label, voted.confidence
    labels = [int(np.argmax(p)) for p in predictions]
    label = majority_vote(labels)
    if label is None:
        # Unweighted majority with no winner: fall back to the soft vote
        # so the verification stage always emits a prediction.
        voted = soft_vote(predictions)
        return voted.label, voted.confidence
    return label, labels.count(label) / len(labels)


def _verification_votes(
    version: np.ndarray,
    verifiers: Sequence[tuple[str, Network]],
    target_model: Network | None,
) -> list[np.ndarray]:
    votes = [predict_proba(net, version[None, :])[0] for _, net in verifiers]
    if target_model is not None:
        votes.append(predict_proba(target_model, version[None, :])[0])
    return votes


def _most_confident_cross_layer(
    versions: Sequence[np.ndarray],
    verifiers: Sequence[tuple[str, Network]],
    target_model: Network | None,
) -> tuple[int, int, float, np.ndarray]:
    """Per-version averaged verifier predictions; returns the index, label,
    confidence, and averaged vector of the most confident version."""
    means = []
    for version in versions:
        votes = _verification_votes(version, verifiers, target_model)
        means.append(np.mean(votes, axis=0))
    peak = [float(m.max()) for m in means]
    c = int(np.argmax(peak))
    label = int(np.argmax(means[c]))
    return c, label, float(means[c][label]), means[c]


def defend_one_to_many(
    x: np.ndarray,
    denoisers: Sequence[Denoiser],
    target_model: Network,
    verifiers: Sequence[tuple[str, Network]],
    *,
    tm_votes: bool = True,
    detection: bool = True,
    vote: str = "soft",
    rng: np.random.Generator | None = None,
) -> DefenseOutcome:
    """Denoising majority first, then the verification vote on the single
    chosen denoised version."""
    if not denoisers or not verifiers:
        raise ConfigError("one-to-many defense needs denoisers and verifiers")
    if vote not in VOTE_KINDS:
        raise ConfigError(f"unknown vote kind {vote!r}")
    decision = denoising_ensemble_decide(denoisers, target_model, x, rng=rng)
    tm = target_model if tm_votes else None

    if decision.flagged:
        versions = [denoise(d, x) for d in denoisers]
        c, wb_label, wb_conf, _ = _most_confident_cross_layer(versions, verifiers, tm)
        flagged = bool(detection)
        return DefenseOutcome(
            flagged=flagged,
            label=None if flagged else wb_label,
            confidence=None if flagged else wb_conf,
            would_be_label=wb_label,
            would_be_confidence=wb_conf,
            chosen_denoiser=None if flagged else denoisers[c].id,
            denoiser_team=tuple(d.id for d in denoisers),
            verifier_team=tuple(i for i, _ in verifiers),
        )

    votes = _verification_votes(decision.chosen_version, verifiers, tm)
    label, confidence = _vote(votes, vote)
    return DefenseOutcome(
        flagged=False,
        label=label,
        confidence=confidence,
        would_be_label=label,
        would_be_confidence=confidence,
        chosen_denoiser=decision.chosen_id,
        denoiser_team=tuple(d.id for d in denoisers),
        verifier_team=tuple(i for i, _ in verifiers),
    )


def defend_many_to_many(
    x: np.ndarray,
    denoisers: Sequence[Denoiser],
    verifiers: Sequence[tuple[str, Network]],
    *,
    detection: bool = True,
    confidence_floor: float = 0.0,
    rng: np.random.Generator | None = None,
) -> DefenseOutcome:
    """Average the verifier predictions over every denoised version and
    keep the most confident version's label."""
    del rng  # no randomness in this variant; kept for driver uniformity
    if not denoisers or not verifiers:
        raise ConfigError("many-to-many defense needs denoisers and verifiers")
    versions = [denoise(d, x) for d in denoisers]
    c, label, confidence, _ = _most_confident_cross_layer(versions, verifiers, None)

    flagged = False
    if detection:
        per_version_labels = []
        for version in versions:
            mean = np.mean(_verification_votes(version, verifiers, None), axis=0)
            per_version_labels.append(int(np.argmax(mean)))
        flagged = majority_vote(per_version_labels) is None or confidence < confidence_floor
    return DefenseOutcome(
        flagged=flagged,
        label=None if flagged else label,
        confidence=None if flagged else confidence,
        would_be_label=label,
        would_be_confidence=confidence,
        chosen_denoiser=denoisers[c].id,
        denoiser_team=tuple(d.id for d in denoisers),
        verifier_team=tuple(i for i, _ in verifiers),
    )


@dataclass
class TeamSource:
    """Where a pipeline's team comes from: a fixed team, or a strategy
    draw over the ranked list / the full size-eligible pool."""

    fixed: tuple[str, ...] | None = None
    ranked: KappaRankedList | None = None
    strategy: TeamStrategy | None = None
    pool: list[tuple[str, ...]] | None = None
    holdout_accuracy: Mapping[tuple[str, ...], float] | None = None

    @classmethod
    def from_fixed(cls, ids: Sequence[str]) -> "TeamSource":
        return cls(fixed=tuple(ids))

    @classmethod
    def from_ranked(
        cls,
        ranked: KappaRankedList,
        strategy: TeamStrategy,
        holdout_accuracy: Mapping[tuple[str, ...], float] | None = None,
        pool: Sequence[tuple[str, ...]] | None = None,
    ) -> "TeamSource":
        return cls(
            ranked=ranked,
            strategy=strategy,
            pool=list(pool) if pool is not None else None,
            holdout_accuracy=holdout_accuracy,
        )

    def draw(self, rng: np.random.Generator) -> tuple[str, ...]:
        if self.fixed is not None:
            return self.fixed
        if self.strategy is None:
            raise ConfigError("team source needs either a fixed team or a strategy")
        ranked = self.ranked
        if ranked is None:
            # The rand strategy draws from the pool and never consults the list.
            ranked = KappaRankedList(teams=[], threshold=float("nan"), min_team_size=0)
        return select_team(
            ranked,
            self.strategy,
            all_teams=self.pool,
            holdout_accuracy=self.holdout_accuracy,
            rng=rng,
        )


@dataclass
class DefensePipeline:
    """A fully wired cross-layer pipeline: models, team sources, knobs."""

    variant: str
    target_model: Network
    denoisers: Mapping[str, Denoiser]
    verifier_pool: VerifierPool
    denoiser_source: TeamSource
    verifier_source: TeamSource
    tm_votes: bool = True
    detection: bool = True
    vote: str = "soft"
    confidence_floor: float = 0.0
    runtime_randomization: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in PIPELINE_VARIANTS:
            raise ConfigError(f"unknown pipeline variant {self.variant!r}")

    def _teams(self, rng: np.random.Generator) -> tuple[list[Denoiser], list[tuple[str, Network]]]:
        d_ids = self.denoiser_source.draw(rng)
        v_ids = self.verifier_source.draw(rng)
        missing = [i for i in d_ids if i not in self.denoisers]
        if missing:
            raise ConfigError(f"unknown denoiser ids: {missing}")
        return [self.denoisers[i] for i in d_ids], self.verifier_pool.subset(v_ids)

    def decide(
        self,
        x: np.ndarray,
        rng: np.random.Generator,
        teams: tuple[list[Denoiser], list[tuple[str, Network]]] | None = None,
    ) -> DefenseOutcome:
        denoiser_team, verifier_team = teams if teams is not None else self._teams(rng)
        if self.variant == "one_to_many":
            return defend_one_to_many(
                x,
                denoiser_team,
                self.target_model,
                verifier_team,
                tm_votes=self.tm_votes,
                detection=self.detection,
                vote=self.vote,
                rng=rng,
            )
        return defend_many_to_many(
            x,
            denoiser_team,
            verifier_team,
            detection=self.detection,
            confidence_floor=self.confidence_floor,
            rng=rng,
        )


def run_defense_batch(
    pipeline: DefensePipeline,
    examples: np.ndarray,
    ground_truth: Sequence[int],
) -> list[DefenseOutcome]:
    """Run the pipeline over a batch and resolve verdicts against truth.

    The per-example random stream is keyed by ``(pipeline.seed, index)``,
    so results are reproducible even with runtime team randomization, and
    each example's outcome is independent of batch order.
    """
    x = np.asarray(examples, dtype=float)
    truth = np.asarray(ground_truth, dtype=int)
    if x.ndim != 2 or truth.shape != (x.shape[0],):
        raise InputShapeError("examples must be (n, D) with one ground-truth label per row")

    fixed_teams = None
    if not pipeline.runtime_randomization:
        fixed_teams = pipeline._teams(np.random.default_rng([pipeline.seed, 0]))
    outcomes = []
    for i in range(x.shape[0]):
        rng = np.random.default_rng([pipeline.seed, 1, i])
        teams = fixed_teams if fixed_teams is not None else pipeline._teams(rng)
        outcome = pipeline.decide(x[i], rng, teams=teams)
        outcomes.append(resolve_outcome(outcome, int(truth[i])))
    return outcomes


# ---------------------------------------------------------------------------
# Reference single-stage defenses, used as report baselines.


def single_denoiser_outcome(x: np.ndarray, denoiser: Denoiser, target_model: Network) -> DefenseOutcome:
    """Target-model prediction on one denoiser's output; never flags."""
    version = denoise(denoiser, x)
    probs = predict_proba(target_model, version[None, :])[0]
    label = int(np.argmax(probs))
    return DefenseOutcome(
        flagged=False,
        label=label,
        confidence=float(probs[label]),
        would_be_label=label,
        would_be_confidence=float(probs[label]),
        chosen_denoiser=denoiser.id,
        denoiser_team=(denoiser.id,),
        verifier_team=(),
    )


def denoising_ensemble_outcome(
    x: np.ndarray,
    denoisers: Sequence[Denoiser],
    target_model: Network,
    *,
    detection: bool = True,
    rng: np.random.Generator | None = None,
) -> DefenseOutcome:
    """Denoising-ensemble majority with the target model as the classifier.

    The counterfactual label for a failed majority is the target-model
    label of the most confident denoised version.
    """
    decision = denoising_ensemble_decide(denoisers, target_model, x, rng=rng)
    team = tuple(d.id for d in denoisers)
    if not decision.flagged:
        probs = predict_proba(target_model, decision.chosen_version[None, :])[0]
        confidence = float(probs[decision.voted_label])
        return DefenseOutcome(
            flagged=False,
            label=decision.voted_label,
            confidence=confidence,
            would_be_label=decision.voted_label,
            would_be_confidence=confidence,
            chosen_denoiser=decision.chosen_id,
            denoiser_team=team,
            verifier_team=(),
        )
    versions = [denoise(d, x) for d in denoisers]
    probs = [predict_proba(target_model, v[None, :])[0] for v in versions]
    c = int(np.argmax([float(p.max()) for p in probs]))
    wb_label = int(np.argmax(probs[c]))
    wb_conf = float(probs[c][wb_label])
    flagged = bool(detection)
    return DefenseOutcome(
        flagged=flagged,
        label=None if flagged else wb_label,
        confidence=None if flagged else wb_conf,
        would_be_label=wb_label,
        would_be_confidence=wb_conf,
        chosen_denoiser=None if flagged else denoisers[c].id,
        denoiser_team=team,
        verifier_team=(),
    )


def verification_ensemble_outcome(
    x: np.ndarray,
    verifiers: Sequence[tuple[str, Network]],
    *,
    vote: str = "soft",
) -> DefenseOutcome:
    """Verification vote on the raw input; no denoising, no detection."""
    if not verifiers:
        raise ConfigError("verification ensemble needs at least one member")
    votes = [predict_proba(net, np.asarray(x, dtype=float)[None, :])[0] for _, net in verifiers]
    label, confidence = _vote(votes, vote)
    return DefenseOutcome(
        flagged=False,
        label=label,
        confidence=confidence,
        would_be_label=label,
        would_be_confidence=confidence,
        chosen_denoiser=None,
        denoiser_team=(),
        verifier_team=tuple(i for i, _ in verifiers),
    )


def run_reference_batch(
    kind: str,
    examples: np.ndarray,
    ground_truth: Sequence[int],
    *,
    target_model: Network | None = None,
    denoiser: Denoiser | None = None,
    denoisers: Sequence[Denoiser] | None = None,
    verifiers: Sequence[tuple[str, Network]] | None = None,
    vote: str = "soft",
    seed: int = 0,
) -> list[DefenseOutcome]:
    """Batch driver for the reference defenses: ``single_denoiser``,
    ``denoising_ensemble``, or ``verification_ensemble``."""
    x = np.asarray(examples, dtype=float)
    truth = np.asarray(ground_truth, dtype=int)
    if x.ndim != 2 or truth.shape != (x.shape[0],):
        raise InputShapeError("examples must be (n, D) with one ground-truth label per row")
    outcomes = []
    for i in range(x.shape[0]):
        if kind == "single_denoiser":
            outcome = single_denoiser_outcome(x[i], denoiser, target_model)
        elif kind == "denoising_ensemble":
            rng = np.random.default_rng([seed, 1, i])
            outcome = denoising_ensemble_outcome(x[i], denoisers, target_model, rng=rng)
        elif kind == "verification_ensemble":
            outcome = verification_ensemble_outcome(x[i], verifiers, vote=vote)
        else:
            raise ConfigError(f"unknown reference defense kind {kind!r}")
        outcomes.append(resolve_outcome(outcome, int(truth[i])))
    return outcomes
