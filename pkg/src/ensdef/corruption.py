"""Stochastic input corruption used to train denoising autoencoders.

The pseudorandom generator is pinned to numpy's ``default_rng`` (PCG64) so
corrupted datasets reproduce exactly across runs and platforms. For a given
spec, ``corrupt`` draws, in order:

* ``gaussian`` — one ``rng.normal(0, magnitude, size=D)`` array, added and
  clipped to ``[0, 1]``;
* ``salt_pepper`` — ``rng.choice(D, k, replace=False)`` positions followed
  by ``rng.integers(0, 2, k)`` values (0 or 1, equiprobable);
* ``masking`` — ``rng.choice(D, k, replace=False)`` positions set to 0;

where ``k = floor(magnitude * D + 0.5)`` (round half up).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, InputValidationError

NOISE_KINDS = ("gaussian", "salt_pepper", "masking")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family, magnitude (sigma or corrupted fraction), and seed."""

    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.magnitude < 0:
            raise ConfigError("noise magnitude must be non-negative")
        if self.kind in ("salt_pepper", "masking") and self.magnitude > 1:
            raise ConfigError(f"{self.kind} magnitude is a fraction and must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("noise seed must be a non-negative integer")


def corrupted_count(fraction: float, dim: int) -> int:
    """Number of entries hit by ratio-based noise: round half up."""
    return int(np.floor(fraction * dim + 0.5))


def corrupt(x: np.ndarray, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Corrupt one vector in ``[0, 1]^D``; the result stays in ``[0, 1]^D``.

    Without an explicit ``rng`` this is a pure function of ``(x, spec)``:
    a fresh generator is seeded from ``spec.seed``. Passing a generator
    lets callers draw successive corruptions from one stream, as denoiser
    training does once per epoch.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputValidationError(f"corrupt expects a vector, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InputValidationError("input entries must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    if spec.kind == "gaussian":
        noisy = arr + rng.normal(0.0, spec.magnitude, size=arr.shape)
        return np.clip(noisy, 0.0, 1.0)

    k = corrupted_count(spec.magnitude, arr.size)
    out = arr.copy()
    positions = rng.choice(arr.size, size=k, replace=False)
    if spec.kind == "salt_pepper":
        out[positions] = rng.integers(0, 2, size=k).astype(float)
    else:  # masking
        out[positions] = 0.0
    return out


def corrupt_batch(x: np.ndarray, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Row-wise ``corrupt`` over a matrix, consuming one shared stream.

    Equivalent to calling ``corrupt`` on each row in order, so batch
    corruption and sequential corruption agree exactly.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise InputValidationError(f"corrupt_batch expects a matrix, got shape {arr.shape}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return np.stack([corrupt(row, spec, rng=rng) for row in arr]) if arr.shape[0] else arr.copy()
