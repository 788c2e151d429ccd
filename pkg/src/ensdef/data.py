"""Dataset ingestion: IDX binary files, synthetic clusters, prediction CSVs."""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BadMagicError,
    ConfigError,
    CountMismatchError,
    DataFormatError,
    TruncatedFileError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
PREDICTION_SUM_ACCEPT = 1e-6
PREDICTION_SUM_RENORMALIZE = 1e-2


@dataclass
class Dataset:
    """Feature vectors in [0, 1]^D with integer labels in [0, K)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataFormatError("dataset needs (n, D) features and n labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DataFormatError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse the big-endian IDX image/label pair into a flat dataset.

    Pixels are scaled to [0, 1] by division with 255. Raises distinct
    errors for a bad magic number, a truncated file, and an image/label
    count mismatch.
    """
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()

    if len(img) < 16:
        raise TruncatedFileError(f"{images_path}: image header needs 16 bytes")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(f"{images_path}: expected magic {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}")
    expected = 16 + count * rows * cols
    if len(img) < expected:
        raise TruncatedFileError(f"{images_path}: expected {expected} bytes, found {len(img)}")

    if len(lab) < 8:
        raise TruncatedFileError(f"{labels_path}: label header needs 8 bytes")
    lab_magic, lab_count = struct.unpack(">II", lab[:8])
    if lab_magic != IDX_LABEL_MAGIC:
        raise BadMagicError(f"{labels_path}: expected magic {IDX_LABEL_MAGIC:#010x}, got {lab_magic:#010x}")
    if len(lab) < 8 + lab_count:
        raise TruncatedFileError(f"{labels_path}: expected {8 + lab_count} bytes, found {len(lab)}")
    if count != lab_count:
        raise CountMismatchError(f"{count} images but {lab_count} labels")

    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(int)
    features = pixels.reshape(count, rows * cols).astype(float) / 255.0
    n_classes = int(labels.max()) + 1 if count else 10
    return Dataset(X=features, y=labels, n_classes=n_classes)


def generate_synthetic(
    n_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Seeded Gaussian class clusters clipped to [0, 1]^D.

    Cluster centers are drawn uniformly from [0.15, 0.85]^D, so small
    spreads give linearly separable classes. Examples come out grouped by
    class in class order.
    """
    if n_classes < 1 or dim < 1:
        raise ConfigError("n_classes and dim must be positive")
    if per_class < 1:
        raise ConfigError("per-class count must be positive (empty classes are not allowed)")
    if spread < 0:
        raise ConfigError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(n_classes, dim))
    features = []
    labels = []
    for k in range(n_classes):
        points = centers[k] + rng.normal(0.0, spread, size=(per_class, dim))
        features.append(np.clip(points, 0.0, 1.0))
        labels.append(np.full(per_class, k, dtype=int))
    return Dataset(X=np.vstack(features), y=np.concatenate(labels), n_classes=n_classes)


def stratified_split(dataset: Dataset, train_per_class: int) -> tuple[Dataset, Dataset]:
    """Per class, the first ``train_per_class`` examples (in dataset order)
    go to the training split, the rest to the test split. Deterministic."""
    if train_per_class < 1:
        raise ConfigError("train_per_class must be positive")
    train_idx, test_idx = [], []
    for k in range(dataset.n_classes):
        members = np.flatnonzero(dataset.y == k)
        if members.size <= train_per_class:
            raise ConfigError(
                f"class {k} has {members.size} examples; need more than {train_per_class} to split"
            )
        train_idx.extend(members[:train_per_class])
        test_idx.extend(members[train_per_class:])
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.asarray(test_idx, dtype=int)
    return (
        Dataset(X=dataset.X[train_idx], y=dataset.y[train_idx], n_classes=dataset.n_classes),
        Dataset(X=dataset.X[test_idx], y=dataset.y[test_idx], n_classes=dataset.n_classes),
    )


@dataclass
class PredictionMatrix:
    """Per-model probability rows over a shared, ordered example set."""

    example_ids: list[str]
    probabilities: dict[str, np.ndarray]  # model_id -> (n_examples, K)

    @property
    def model_ids(self) -> list[str]:
        return list(self.probabilities.keys())

    def label_columns(self) -> dict[str, np.ndarray]:
        return {m: np.argmax(p, axis=1) for m, p in self.probabilities.items()}


def load_prediction_matrix(path) -> PredictionMatrix:
    """Read a CSV of per-model prediction vectors.

    Header: ``example_id,model_id,p_0,...,p_{K-1}``. Rows whose
    probabilities sum within 1e-6 of 1 are accepted as-is; within 1e-2
    they are renormalized with a warning; anything further off, negative
    entries, ragged rows, or misaligned example sets are rejected.
    """
    rows_by_model: dict[str, list[tuple[str, np.ndarray]]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 3 or header[0] != "example_id" or header[1] != "model_id":
            raise DataFormatError("prediction matrix header must be example_id,model_id,p_0,...")
        width = len(header) - 2
        for lineno, line in enumerate(reader, start=2):
            if len(line) != width + 2:
                raise DataFormatError(f"{path}:{lineno}: ragged row ({len(line)} fields, expected {width + 2})")
            example_id, model_id = line[0], line[1]
            try:
                probs = np.array([float(v) for v in line[2:]], dtype=float)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric probability") from exc
            if (probs < 0).any():
                raise DataFormatError(f"{path}:{lineno}: negative probability")
            total = float(probs.sum())
            if abs(total - 1.0) > PREDICTION_SUM_RENORMALIZE:
                raise DataFormatError(f"{path}:{lineno}: probabilities sum to {total}, outside tolerance")
            if abs(total - 1.0) > PREDICTION_SUM_ACCEPT:
                warnings.warn(f"{path}:{lineno}: renormalizing probabilities summing to {total}")
                probs = probs / total
            rows_by_model.setdefault(model_id, []).append((example_id, probs))

    if not rows_by_model:
        raise DataFormatError(f"{path}: no prediction rows")
    model_ids = list(rows_by_model.keys())
    reference = [example_id for example_id, _ in rows_by_model[model_ids[0]]]
    probabilities = {}
    for model_id in model_ids:
        ids = [example_id for example_id, _ in rows_by_model[model_id]]
        if ids != reference:
            raise DataFormatError(f"{path}: model {model_id!r} covers a different example sequence")
        probabilities[model_id] = np.stack([p for _, p in rows_by_model[model_id]])
    return PredictionMatrix(example_ids=reference, probabilities=probabilities)
