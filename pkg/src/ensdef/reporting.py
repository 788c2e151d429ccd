"""Report emission: CSV tables and line-delimited outcome logs.

All writers are deterministic — no timestamps, fixed float formatting —
so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Mapping, Sequence

import numpy as np

from .defense import DefenseOutcome
from .diversity import KappaRankedList
from .exceptions import DataFormatError
from .metrics import DefenseMetrics, TransferabilityTable

OUTCOME_LOG_FORMAT_VERSION = 1


def _fmt(value: float, places: int = 6) -> str:
    return f"{value:.{places}f}"


def write_kappa_matrix_csv(ids: Sequence[str], matrix: np.ndarray, path) -> None:
    """Upper triangle only; the diagonal and lower triangle stay blank.
    Undefined cells are written as ``nan``."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + list(ids))
        for i, row_id in enumerate(ids):
            row = [row_id]
            for j in range(len(ids)):
                if j <= i:
                    row.append("")
                else:
                    value = matrix[i, j]
                    row.append("nan" if np.isnan(value) else _fmt(value))
            writer.writerow(row)


def write_ranked_teams_csv(
    ranked: KappaRankedList,
    path,
    holdout_accuracy: Mapping[tuple[str, ...], float] | None = None,
) -> None:
    """One row per team, ascending average kappa; members joined by '+'."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["team", "avg_kappa"]
        if holdout_accuracy is not None:
            header.append("holdout_accuracy")
        writer.writerow(header)
        for team in ranked.teams:
            row = ["+".join(team.members), _fmt(team.avg_kappa)]
            if holdout_accuracy is not None:
                row.append(_fmt(holdout_accuracy[team.members]))
            writer.writerow(row)


def write_defense_report_csv(
    rows: Sequence[tuple[str, str, DefenseMetrics]],
    path,
    *,
    attack_names: Sequence[str],
) -> None:
    """Long-form defense table: one row per (population, pipeline).

    Appends Average and Std rows per pipeline over the attack populations
    (population standard deviation, benign excluded), mirroring the usual
    defense-table layout.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    by_pipeline: dict[str, list[DefenseMetrics]] = {}
    pipeline_order: list[str] = []
    for population, pipeline, metrics in rows:
        if pipeline not in pipeline_order:
            pipeline_order.append(pipeline)
        if population in attack_names:
            by_pipeline.setdefault(pipeline, []).append(metrics)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["population", "pipeline", "psr", "tsr", "dsr", "fp", "n"])
        for population, pipeline, m in rows:
            writer.writerow([population, pipeline, _fmt(m.psr), _fmt(m.tsr), _fmt(m.dsr), _fmt(m.fp), m.n])
        for pipeline in pipeline_order:
            group = by_pipeline.get(pipeline, [])
            if not group:
                continue
            for stat, reducer in (("Average", np.mean), ("Std", np.std)):
                writer.writerow(
                    [
                        stat,
                        pipeline,
                        _fmt(float(reducer([m.psr for m in group]))),
                        _fmt(float(reducer([m.tsr for m in group]))),
                        _fmt(float(reducer([m.dsr for m in group]))),
                        _fmt(float(reducer([m.fp for m in group]))),
                        int(np.sum([m.n for m in group])),
                    ]
                )


def read_defense_report_csv(path) -> dict[tuple[str, str], dict[str, float]]:
    """Inverse of ``write_defense_report_csv`` keyed by (population, pipeline)."""
    table = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            table[(row["population"], row["pipeline"])] = {
                "psr": float(row["psr"]),
                "tsr": float(row["tsr"]),
                "dsr": float(row["dsr"]),
                "fp": float(row["fp"]),
                "n": int(row["n"]),
            }
    return table


def write_transferability_csv(table: TransferabilityTable, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack"] + list(table.model_ids))
        for i, name in enumerate(table.set_names):
            writer.writerow([name] + [_fmt(v) for v in table.values[i]])
        writer.writerow(["Average"] + [_fmt(float(v)) for v in table.values.mean(axis=0)])
        writer.writerow(["Std"] + [_fmt(float(v)) for v in table.values.std(axis=0)])


def write_attack_summary_csv(rows: Sequence[dict], path) -> None:
    """Per-attack generation summary: success rates and mean distortions."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack", "asr", "mr", "mean_l0_fraction", "mean_l2", "mean_linf", "n", "n_misclassified"])
        for row in rows:
            writer.writerow(
                [
                    row["attack"],
                    _fmt(row["asr"]),
                    _fmt(row["mr"]),
                    _fmt(row["mean_l0_fraction"]),
                    _fmt(row["mean_l2"]),
                    _fmt(row["mean_linf"]),
                    row["n"],
                    row["n_misclassified"],
                ]
            )


def write_model_accuracy_csv(rows: Sequence[tuple[str, float]], path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "benign_accuracy"])
        for model_id, accuracy in rows:
            writer.writerow([model_id, _fmt(accuracy)])


def write_outcome_log(outcomes: Sequence[DefenseOutcome], path, *, pipeline: str, population: str) -> None:
    """Line-delimited JSON: a versioned header line, then one record per
    example."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format_version": OUTCOME_LOG_FORMAT_VERSION,
            "pipeline": pipeline,
            "population": population,
            "n": len(outcomes),
        }
        fh.write(json.dumps(header) + "\n")
        for i, o in enumerate(outcomes):
            record = {
                "index": i,
                "verdict": o.verdict,
                "flagged": o.flagged,
                "label": o.label,
                "confidence": o.confidence,
                "would_be_label": o.would_be_label,
                "would_be_confidence": o.would_be_confidence,
                "true_label": o.true_label,
                "chosen_denoiser": o.chosen_denoiser,
                "denoiser_team": list(o.denoiser_team),
                "verifier_team": list(o.verifier_team),
            }
            fh.write(json.dumps(record) + "\n")


def read_outcome_log(path) -> tuple[dict, list[DefenseOutcome]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty outcome log")
    header = json.loads(lines[0])
    if header.get("format_version") != OUTCOME_LOG_FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported outcome log version")
    outcomes = []
    for line in lines[1:]:
        r = json.loads(line)
        outcomes.append(
            DefenseOutcome(
                flagged=bool(r["flagged"]),
                label=r["label"],
                confidence=r["confidence"],
                would_be_label=int(r["would_be_label"]),
                would_be_confidence=float(r["would_be_confidence"]),
                chosen_denoiser=r["chosen_denoiser"],
                denoiser_team=tuple(r["denoiser_team"]),
                verifier_team=tuple(r["verifier_team"]),
                true_label=r["true_label"],
                verdict=r["verdict"],
            )
        )
    return header, outcomes
