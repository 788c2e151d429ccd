"""Defense success metrics and the attack transferability table.

Metric semantics over an evaluated outcome batch:

* ``psr`` — fraction of examples whose counterfactual (detection-disabled)
  defense label is correct. A flagged example still counts when its
  would-be label is right: the repair succeeded even though the flag was
  a false positive.
* ``tsr`` — on adversarial batches, the fraction flagged whose would-be
  label is wrong (correctly detected and not repairable). On benign
  batches, the plain flag rate (the benign false-positive rate).
* ``dsr`` — exactly ``psr + tsr``.
* ``fp`` — fraction flagged whose would-be label is correct.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attacks import AdversarialSet
from .defense import DefenseOutcome
from .exceptions import ConfigError, InputValidationError, UndefinedMetricError
from .nncore import Network, predict_labels

POPULATIONS = ("adversarial", "benign")


@dataclass(frozen=True)
class DefenseMetrics:
    psr: float
    tsr: float
    dsr: float
    fp: float
    n: int


def defense_metrics(outcomes: Sequence[DefenseOutcome], population: str = "adversarial") -> DefenseMetrics:
    """Aggregate an evaluated outcome batch into PSR/TSR/DSR/FP."""
    if population not in POPULATIONS:
        raise ConfigError(f"unknown population {population!r}; expected one of {POPULATIONS}")
    n = len(outcomes)
    if n == 0:
        raise UndefinedMetricError("defense metrics are undefined on an empty batch")
    if any(o.true_label is None for o in outcomes):
        raise InputValidationError("outcomes must be resolved against ground truth")

    would_be_correct = np.array([o.would_be_label == o.true_label for o in outcomes], dtype=bool)
    flagged = np.array([o.flagged for o in outcomes], dtype=bool)

    psr = float(np.mean(would_be_correct))
    fp = float(np.mean(flagged & would_be_correct))
    if population == "adversarial":
        tsr = float(np.mean(flagged & ~would_be_correct))
    else:
        tsr = float(np.mean(flagged))
    return DefenseMetrics(psr=psr, tsr=tsr, dsr=psr + tsr, fp=fp, n=n)


@dataclass
class TransferabilityTable:
    """Attack success rate of each adversarial set against each model."""

    set_names: list[str]
    model_ids: list[str]
    values: np.ndarray  # shape (len(set_names), len(model_ids))


def transferability_matrix(
    adversarial_sets: Sequence[AdversarialSet],
    models: Sequence[tuple[str, Network]],
) -> TransferabilityTable:
    """Evaluate every set against every model.

    Untargeted cells are the misclassification rate; targeted cells the
    target-hit rate. A set generated against a model and filtered to its
    successes scores 1.0 against that model by construction.
    """
    if not adversarial_sets or not models:
        raise UndefinedMetricError("transferability needs at least one set and one model")
    values = np.zeros((len(adversarial_sets), len(models)))
    for i, aset in enumerate(adversarial_sets):
        if aset.n == 0:
            raise UndefinedMetricError(f"adversarial set {aset.name!r} is empty")
        for j, (_, net) in enumerate(models):
            predicted = predict_labels(net, aset.adversarial)
            if aset.spec.targeted:
                if aset.targets is None:
                    raise InputValidationError(f"set {aset.name!r} lacks per-example targets")
                values[i, j] = float(np.mean(predicted == aset.targets))
            else:
                values[i, j] = float(np.mean(predicted != aset.true_labels))
    return TransferabilityTable(
        set_names=[a.name for a in adversarial_sets],
        model_ids=[m[0] for m in models],
        values=values,
    )
