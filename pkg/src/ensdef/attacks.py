"""Gradient-sign adversarial attacks and their evaluation.

Implements the single-step sign attack and its iterative variant with a
per-step projection onto the L-infinity ball around the original input,
in untargeted, most-likely-target, and least-likely-target modes. Attack
generation is deterministic: no randomness is involved.

Argmax ties here and everywhere in this package resolve to the lowest
class index.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import (
    ConfigError,
    DataFormatError,
    InputShapeError,
    InputValidationError,
    NumericOverflowError,
    UndefinedMetricError,
)
from .nncore import LossSpec, Network, _as_batch, _loss_and_gradients, predict_labels, predict_proba

ATTACK_ALGORITHMS = ("fgsm", "bim")
ATTACK_MODES = ("untargeted", "targeted_ml", "targeted_ll")
ADVERSARIAL_SET_FORMAT_VERSION = 1
L0_CHANGE_THRESHOLD = 1e-12

_CE = LossSpec("cross_entropy")


@dataclass(frozen=True)
class AttackSpec:
    """Attack family, targeting mode, and budget.

    ``epsilon`` bounds the L-infinity distortion. For the iterative attack,
    ``bim_alpha`` is the per-step size (default ``epsilon / 10``) and
    ``bim_iters`` the step count.
    """

    algorithm: str
    epsilon: float
    mode: str = "untargeted"
    bim_alpha: float | None = None
    bim_iters: int = 10

    def __post_init__(self):
        if self.algorithm not in ATTACK_ALGORITHMS:
            raise ConfigError(f"unknown attack algorithm {self.algorithm!r}")
        if self.mode not in ATTACK_MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.bim_alpha is not None:
            if self.bim_alpha <= 0:
                raise ConfigError("bim_alpha must be positive")
            if self.bim_alpha > self.epsilon:
                raise ConfigError("bim_alpha must not exceed epsilon")
        if self.bim_iters < 1:
            raise ConfigError("bim_iters must be a positive integer")

    @property
    def step_size(self) -> float:
        return self.bim_alpha if self.bim_alpha is not None else self.epsilon / 10.0

    @property
    def targeted(self) -> bool:
        return self.mode != "untargeted"


@dataclass(frozen=True)
class Distortion:
    l0_fraction: float
    l2: float
    linf: float


@dataclass
class AttackResult:
    adversarial: np.ndarray
    target_class: int | None
    succeeded: bool
    misclassified: bool
    distortion: Distortion
    predicted: int


def select_target_class(pred: np.ndarray, true_label: int, mode: str) -> int | None:
    """Pick the attack target from a prediction vector.

    ``targeted_ml`` returns the highest-scoring class other than the true
    label; ``targeted_ll`` the globally lowest-scoring class; untargeted
    attacks have no target.
    """
    if mode not in ATTACK_MODES:
        raise ConfigError(f"unknown attack mode {mode!r}")
    if mode == "untargeted":
        return None
    p = np.asarray(pred, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ConfigError("target selection needs a probability vector over at least 2 classes")
    if not 0 <= true_label < p.size:
        raise InputValidationError("true_label out of range")
    if mode == "targeted_ll":
        return int(np.argmin(p))
    masked = p.copy()
    masked[true_label] = -np.inf
    return int(np.argmax(masked))


def distortion(x: np.ndarray, x_adv: np.ndarray) -> Distortion:
    """Per-example distortion: changed-coordinate fraction, L2, L-infinity.

    A coordinate counts as changed when it moves by more than 1e-12.
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(x_adv, dtype=float)
    if a.shape != b.shape:
        raise InputShapeError("distortion requires vectors of equal length")
    diff = np.abs(b - a)
    return Distortion(
        l0_fraction=float(np.count_nonzero(diff > L0_CHANGE_THRESHOLD) / a.size),
        l2=float(np.sqrt(np.sum(diff * diff))),
        linf=float(diff.max()) if a.size else 0.0,
    )


def _targets_for_batch(model: Network, x: np.ndarray, true_labels: np.ndarray, spec: AttackSpec):
    if spec.mode == "untargeted":
        return None
    preds = predict_proba(model, x)
    return np.array(
        [select_target_class(preds[i], int(true_labels[i]), spec.mode) for i in range(x.shape[0])],
        dtype=int,
    )


def _sign_step(model: Network, x: np.ndarray, loss_labels: np.ndarray, step: float, coef: float) -> np.ndarray:
    _, _, _, d_input = _loss_and_gradients(model, x, loss_labels, _CE)
    if not np.isfinite(d_input).all():
        raise NumericOverflowError("attack gradient is non-finite")
    return x + coef * step * np.sign(d_input)


def _finish(model, originals, adversarial, true_labels, targets, spec) -> list[AttackResult]:
    predicted = predict_labels(model, adversarial)
    results = []
    for i in range(originals.shape[0]):
        pred = int(predicted[i])
        true = int(true_labels[i])
        target = int(targets[i]) if targets is not None else None
        succeeded = pred == target if spec.targeted else pred != true
        results.append(
            AttackResult(
                adversarial=adversarial[i],
                target_class=target,
                succeeded=bool(succeeded),
                misclassified=pred != true,
                distortion=distortion(originals[i], adversarial[i]),
                predicted=pred,
            )
        )
    return results


def attack_batch(model: Network, x: np.ndarray, true_labels, spec: AttackSpec) -> list[AttackResult]:
    """Run the configured attack on each row of ``x``.

    Callers are expected to pass only examples the model classifies
    correctly. Outputs always lie in ``[0, 1]^D`` and within the epsilon
    ball (L-infinity) of the originals.
    """
    originals = _as_batch(x, model.input_dim)
    labels = np.asarray(true_labels, dtype=int)
    if labels.ndim != 1 or labels.shape[0] != originals.shape[0]:
        raise InputShapeError("true_labels must align with the attacked examples")

    targets = _targets_for_batch(model, originals, labels, spec)
    loss_labels = targets if spec.targeted else labels
    # Targeted attacks descend the loss toward the target class.
    coef = -1.0 if spec.targeted else 1.0

    if spec.algorithm == "fgsm":
        adversarial = np.clip(_sign_step(model, originals, loss_labels, spec.epsilon, coef), 0.0, 1.0)
    else:
        lower = originals - spec.epsilon
        upper = originals + spec.epsilon
        adversarial = originals
        for _ in range(spec.bim_iters):
            stepped = _sign_step(model, adversarial, loss_labels, spec.step_size, coef)
            adversarial = np.clip(np.clip(stepped, lower, upper), 0.0, 1.0)
    return _finish(model, originals, adversarial, labels, targets, spec)


def fgsm(model: Network, x: np.ndarray, true_label: int, spec: AttackSpec) -> AttackResult:
    """Single-step sign attack on one example."""
    if spec.algorithm != "fgsm":
        raise ConfigError("fgsm() requires an fgsm spec")
    return attack_batch(model, np.asarray(x, dtype=float)[None, :], [true_label], spec)[0]


def bim(model: Network, x: np.ndarray, true_label: int, spec: AttackSpec) -> AttackResult:
    """Iterative sign attack on one example; every iterate stays inside
    the epsilon ball and the unit box."""
    if spec.algorithm != "bim":
        raise ConfigError("bim() requires a bim spec")
    return attack_batch(model, np.asarray(x, dtype=float)[None, :], [true_label], spec)[0]


def evaluate_attack(model: Network, originals: np.ndarray, results: Sequence[AttackResult]) -> tuple[float, float]:
    """Attack success rate and misclassification rate over a batch."""
    if len(results) == 0:
        raise UndefinedMetricError("attack metrics are undefined on an empty batch")
    originals = _as_batch(originals, model.input_dim, name="originals")
    if originals.shape[0] != len(results):
        raise InputShapeError("results must align with the attacked originals")
    asr = float(np.mean([r.succeeded for r in results]))
    mr = float(np.mean([r.misclassified for r in results]))
    return asr, mr


@dataclass
class AdversarialSet:
    """A generated (or ingested) adversarial example set plus bookkeeping."""

    name: str
    spec: AttackSpec
    adversarial: np.ndarray
    true_labels: np.ndarray
    targets: np.ndarray | None
    succeeded: np.ndarray
    misclassified: np.ndarray
    distortions: np.ndarray  # columns: l0_fraction, l2, linf
    predicted: np.ndarray

    @property
    def n(self) -> int:
        return self.adversarial.shape[0]

    def successful_subset(self) -> "AdversarialSet":
        """Restrict to examples that actually misclassify the target model."""
        keep = np.flatnonzero(self.misclassified)
        return AdversarialSet(
            name=self.name,
            spec=self.spec,
            adversarial=self.adversarial[keep],
            true_labels=self.true_labels[keep],
            targets=self.targets[keep] if self.targets is not None else None,
            succeeded=self.succeeded[keep],
            misclassified=self.misclassified[keep],
            distortions=self.distortions[keep],
            predicted=self.predicted[keep],
        )


def build_adversarial_set(name: str, spec: AttackSpec, true_labels, results: Sequence[AttackResult]) -> AdversarialSet:
    targets = None
    if spec.targeted:
        targets = np.array([r.target_class for r in results], dtype=int)
    return AdversarialSet(
        name=name,
        spec=spec,
        adversarial=np.stack([r.adversarial for r in results]) if results else np.zeros((0, 0)),
        true_labels=np.asarray(true_labels, dtype=int),
        targets=targets,
        succeeded=np.array([r.succeeded for r in results], dtype=bool),
        misclassified=np.array([r.misclassified for r in results], dtype=bool),
        distortions=np.array(
            [[r.distortion.l0_fraction, r.distortion.l2, r.distortion.linf] for r in results], dtype=float
        ),
        predicted=np.array([r.predicted for r in results], dtype=int),
    )


def save_adversarial_set(aset: AdversarialSet, directory) -> None:
    """Persist as ``examples.csv`` (label + feature columns, value-exact
    floats) plus ``manifest.json`` (spec and per-example bookkeeping)."""
    os.makedirs(directory, exist_ok=True)
    dim = aset.adversarial.shape[1]
    with open(os.path.join(directory, "examples.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{i}" for i in range(dim)])
        for label, row in zip(aset.true_labels, aset.adversarial):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
    records = []
    for i in range(aset.n):
        records.append(
            {
                "index": i,
                "true_label": int(aset.true_labels[i]),
                "target": int(aset.targets[i]) if aset.targets is not None else None,
                "succeeded": bool(aset.succeeded[i]),
                "misclassified": bool(aset.misclassified[i]),
                "predicted": int(aset.predicted[i]),
                "l0_fraction": float(aset.distortions[i, 0]),
                "l2": float(aset.distortions[i, 1]),
                "linf": float(aset.distortions[i, 2]),
            }
        )
    manifest = {
        "format_version": ADVERSARIAL_SET_FORMAT_VERSION,
        "name": aset.name,
        "attack": {
            "algorithm": aset.spec.algorithm,
            "mode": aset.spec.mode,
            "epsilon": aset.spec.epsilon,
            "bim_alpha": aset.spec.bim_alpha,
            "bim_iters": aset.spec.bim_iters,
        },
        "records": records,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_adversarial_set(directory) -> AdversarialSet:
    examples_path = os.path.join(directory, "examples.csv")
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != ADVERSARIAL_SET_FORMAT_VERSION:
        raise DataFormatError("unsupported adversarial-set format_version")
    attack = manifest["attack"]
    spec = AttackSpec(
        algorithm=attack["algorithm"],
        epsilon=float(attack["epsilon"]),
        mode=attack["mode"],
        bim_alpha=attack["bim_alpha"],
        bim_iters=int(attack["bim_iters"]),
    )
    rows, labels = [], []
    with open(examples_path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise DataFormatError("examples.csv must start with a 'label' column")
        width = len(header) - 1
        for line in reader:
            if len(line) != width + 1:
                raise DataFormatError("ragged row in examples.csv")
            labels.append(int(line[0]))
            rows.append([float(v) for v in line[1:]])
    records = manifest["records"]
    if len(records) != len(rows):
        raise DataFormatError("manifest records do not align with examples.csv rows")
    targets = None
    if spec.targeted:
        targets = np.array([r["target"] for r in records], dtype=int)
    return AdversarialSet(
        name=manifest["name"],
        spec=spec,
        adversarial=np.asarray(rows, dtype=float) if rows else np.zeros((0, width)),
        true_labels=np.asarray(labels, dtype=int),
        targets=targets,
        succeeded=np.array([r["succeeded"] for r in records], dtype=bool),
        misclassified=np.array([r["misclassified"] for r in records], dtype=bool),
        distortions=np.array([[r["l0_fraction"], r["l2"], r["linf"]] for r in records], dtype=float),
        predicted=np.array([r["predicted"] for r in records], dtype=int),
    )
