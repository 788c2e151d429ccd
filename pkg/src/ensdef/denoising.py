"""Denoising autoencoders and the denoising-ensemble majority decision.

A denoiser is an encoder/decoder pair trained to reconstruct clean inputs
from stochastically corrupted ones. A team of denoisers feeds a target
classifier: when a strict majority of the per-member denoised versions get
the same label, one majority member is chosen (seeded, uniform) as the
ensemble output; otherwise the query is flagged as adversarial.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corruption import NoiseSpec, corrupt_batch
from .exceptions import ConfigError, DataFormatError, InputShapeError
from .nncore import (
    LayerSpec,
    LossSpec,
    Network,
    TrainConfig,
    _as_batch,
    _forward_batch,
    init_network,
    network_from_document,
    network_to_document,
    predict_labels,
    train,
)

DENOISER_FORMAT_VERSION = 1


@dataclass
class Denoiser:
    """Encoder/decoder pair plus the noise it was trained against."""

    encoder: Network
    decoder: Network
    noise: NoiseSpec
    id: str

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate()
        if self.decoder.input_dim != self.encoder.output_dim:
            raise ConfigError("decoder input dim must equal encoder output dim")
        if self.decoder.output_dim != self.encoder.input_dim:
            raise ConfigError("decoder output dim must equal the data dimension")
        if self.decoder.layers[-1].activation != "sigmoid":
            raise ConfigError("the decoder must end in a sigmoid layer to stay in [0, 1]")


def train_denoiser(
    clean: np.ndarray,
    encoder_layers: Sequence[LayerSpec],
    decoder_layers: Sequence[LayerSpec],
    noise: NoiseSpec,
    reg_lambda: float,
    cfg: TrainConfig,
    *,
    denoiser_id: str = "denoiser",
) -> Denoiser:
    """Train encoder and decoder jointly on (corrupted, clean) pairs.

    Each epoch corrupts the clean set afresh from the stream seeded by
    ``noise.seed``, matching the stochastic-corruption training semantics.
    Deterministic given ``(noise.seed, cfg.seed)``.
    """
    clean = np.asarray(clean, dtype=float)
    if clean.ndim != 2 or clean.shape[0] == 0:
        raise InputShapeError("clean data must be a non-empty (n, D) matrix")
    dim = clean.shape[1]
    if not encoder_layers or not decoder_layers:
        raise ConfigError("encoder and decoder each need at least one layer")
    if decoder_layers[-1].units != dim:
        raise ConfigError("the final decoder layer must restore the data dimension")
    if decoder_layers[-1].activation != "sigmoid":
        raise ConfigError("the final decoder layer must use sigmoid activation")

    composite = init_network(dim, list(encoder_layers) + list(decoder_layers), cfg.seed)
    noise_rng = np.random.default_rng(noise.seed)
    trained = train(
        composite,
        clean,
        clean,
        LossSpec("mse_frobenius", reg_lambda=reg_lambda),
        cfg,
        epoch_inputs=lambda epoch: corrupt_batch(clean, noise, rng=noise_rng),
    )

    split = len(encoder_layers)
    encoder = Network(
        input_dim=dim,
        layers=trained.layers[:split],
        weights=trained.weights[:split],
        biases=trained.biases[:split],
    )
    decoder = Network(
        input_dim=encoder.output_dim,
        layers=trained.layers[split:],
        weights=trained.weights[split:],
        biases=trained.biases[split:],
    )
    denoiser = Denoiser(encoder=encoder, decoder=decoder, noise=noise, id=denoiser_id)
    denoiser.validate()
    return denoiser


def denoise_batch(denoiser: Denoiser, x: np.ndarray) -> np.ndarray:
    """Apply encoder then decoder to each row; output stays in [0, 1]^D."""
    batch = _as_batch(x, denoiser.input_dim)
    if batch.size and (batch.min() < 0.0 or batch.max() > 1.0):
        raise InputShapeError("denoiser inputs must lie in [0, 1]")
    latent, _ = _forward_batch(denoiser.encoder, batch)
    restored, _ = _forward_batch(denoiser.decoder, latent)
    return restored


def denoise(denoiser: Denoiser, x: np.ndarray) -> np.ndarray:
    """Single-example denoising; identical to the batch path on one row."""
    return denoise_batch(denoiser, np.asarray(x, dtype=float)[None, :])[0]


@dataclass
class DenoisingDecision:
    """Outcome of the denoising-ensemble majority vote for one query."""

    flagged: bool
    voted_label: int | None
    chosen_id: str | None
    chosen_version: np.ndarray | None
    member_labels: tuple[int, ...]
    member_ids: tuple[str, ...]


def denoising_ensemble_decide(
    team: Sequence[Denoiser],
    target_model: Network,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
) -> DenoisingDecision:
    """Majority decision over the target model's labels of each denoised
    version. Strict majority (> team size / 2) is required; ties among the
    majority members are broken by a uniform seeded choice. Without a
    majority the query is flagged as adversarial.
    """
    if not team:
        raise ConfigError("denoising ensemble must have at least one member")
    if rng is None:
        rng = np.random.default_rng(0)

    versions = [denoise(d, x) for d in team]
    labels = [int(predict_labels(target_model, v[None, :])[0]) for v in versions]
    member_ids = tuple(d.id for d in team)

    counts: dict[int, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    best_label, best_count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if best_count * 2 <= len(team):
        return DenoisingDecision(
            flagged=True,
            voted_label=None,
            chosen_id=None,
            chosen_version=None,
            member_labels=tuple(labels),
            member_ids=member_ids,
        )
    candidates = [i for i, label in enumerate(labels) if label == best_label]
    chosen = candidates[int(rng.integers(len(candidates)))]
    return DenoisingDecision(
        flagged=False,
        voted_label=best_label,
        chosen_id=team[chosen].id,
        chosen_version=versions[chosen],
        member_labels=tuple(labels),
        member_ids=member_ids,
    )


def denoiser_to_document(denoiser: Denoiser) -> dict:
    denoiser.validate()
    return {
        "format_version": DENOISER_FORMAT_VERSION,
        "id": denoiser.id,
        "noise": {
            "kind": denoiser.noise.kind,
            "magnitude": denoiser.noise.magnitude,
            "seed": denoiser.noise.seed,
        },
        "encoder": network_to_document(denoiser.encoder),
        "decoder": network_to_document(denoiser.decoder),
    }


def denoiser_from_document(doc: dict) -> Denoiser:
    if not isinstance(doc, dict) or doc.get("format_version") != DENOISER_FORMAT_VERSION:
        raise DataFormatError("unsupported denoiser document")
    try:
        noise = NoiseSpec(
            kind=doc["noise"]["kind"],
            magnitude=float(doc["noise"]["magnitude"]),
            seed=int(doc["noise"]["seed"]),
        )
        denoiser = Denoiser(
            encoder=network_from_document(doc["encoder"]),
            decoder=network_from_document(doc["decoder"]),
            noise=noise,
            id=str(doc["id"]),
        )
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed denoiser document: {exc}") from exc
    denoiser.validate()
    return denoiser


def save_denoiser(denoiser: Denoiser, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(denoiser_to_document(denoiser), fh)


def load_denoiser(path) -> Denoiser:
    with open(path, "r", encoding="utf-8") as fh:
        return denoiser_from_document(json.load(fh))


__all__ = [
    "Denoiser",
    "DenoisingDecision",
    "denoise",
    "denoise_batch",
    "denoising_ensemble_decide",
    "denoiser_from_document",
    "denoiser_to_document",
    "load_denoiser",
    "save_denoiser",
    "train_denoiser",
]
