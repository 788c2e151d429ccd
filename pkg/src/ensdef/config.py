"""Experiment configuration: one versioned JSON document drives every
CLI subcommand. All seeds are explicit so runs repeat bit for bit."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .attacks import AttackSpec
from .corruption import NoiseSpec
from .diversity import TeamStrategy
from .exceptions import ConfigError
from .nncore import TrainConfig

CONFIG_VERSION = 1


@dataclass
class DatasetConfig:
    kind: str  # "synthetic" | "idx"
    classes: int = 10
    dim: int = 64
    train_per_class: int = 100
    test_per_class: int = 40
    spread: float = 0.1
    seed: int = 0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    subset: int | None = None  # optional cap on examples per IDX split

    def __post_init__(self):
        if self.kind not in ("synthetic", "idx"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "idx":
            missing = [
                name
                for name in ("train_images", "train_labels", "test_images", "test_labels")
                if getattr(self, name) is None
            ]
            if missing:
                raise ConfigError(f"idx dataset config is missing {missing}")


@dataclass
class ClassifierConfig:
    id: str
    hidden: tuple[int, ...]
    activation: str
    train: TrainConfig
    # Fraction of the training split sampled (without replacement, seeded by
    # the training seed) before fitting; below 1.0 it decorrelates verifiers.
    train_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")


@dataclass
class DenoiserConfig:
    id: str
    encoder: tuple[int, ...]
    decoder: tuple[int, ...]
    noise: NoiseSpec
    reg_lambda: float
    train: TrainConfig


@dataclass
class AttackConfig:
    name: str
    spec: AttackSpec
    count_per_class: int


@dataclass
class DiversityConfig:
    selector: str = "all_examples"
    threshold: float = 0.6
    min_team_size: int = 3
    max_team_size: int | None = None
    combination_cap: int = 200_000
    kappa_form: str = "product"


@dataclass
class PipelineConfig:
    name: str
    variant: str
    strategy: TeamStrategy
    tm_votes: bool = True
    detection: bool = True
    vote: str = "soft"
    confidence_floor: float = 0.0
    runtime_randomization: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("one_to_many", "many_to_many"):
            raise ConfigError(f"unknown pipeline variant {self.variant!r}")


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    dataset: DatasetConfig
    target_model: ClassifierConfig
    denoisers: list[DenoiserConfig]
    verifiers: list[ClassifierConfig]
    attacks: list[AttackConfig]
    diversity: DiversityConfig
    pipelines: list[PipelineConfig]
    prediction_matrix: str | None = None

    def __post_init__(self):
        for group, label in ((self.denoisers, "denoiser"), (self.verifiers, "verifier")):
            ids = [c.id for c in group]
            if len(set(ids)) != len(ids):
                raise ConfigError(f"duplicate {label} ids: {ids}")
        names = [a.name for a in self.attacks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate attack names: {names}")
        names = [p.name for p in self.pipelines]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate pipeline names: {names}")


def _train_config(raw: dict, *, fallback_seed: int, defaults: dict | None = None) -> TrainConfig:
    merged = dict(defaults or {})
    merged.update({k: raw[k] for k in raw})
    return TrainConfig(
        learning_rate=float(merged.get("learning_rate", 0.001)),
        batch_size=int(merged.get("batch_size", 256)),
        epochs=int(merged.get("epochs", 50)),
        seed=int(merged.get("seed", fallback_seed)),
        adam_beta1=float(merged.get("adam_beta1", 0.9)),
        adam_beta2=float(merged.get("adam_beta2", 0.999)),
        adam_eps=float(merged.get("adam_eps", 1e-8)),
    )


def _classifier_config(raw: dict, default_id: str, fallback_seed: int) -> ClassifierConfig:
    return ClassifierConfig(
        id=str(raw.get("id", default_id)),
        hidden=tuple(int(u) for u in raw.get("hidden", [32])),
        activation=str(raw.get("activation", "relu")),
        train=_train_config(raw, fallback_seed=fallback_seed),
        train_fraction=float(raw.get("train_fraction", 1.0)),
    )


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}; expected {CONFIG_VERSION}")
    for key in ("seed", "output_dir", "dataset", "target_model"):
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")

    seed = int(doc["seed"])
    ds_raw = dict(doc["dataset"])
    dataset = DatasetConfig(
        kind=str(ds_raw.get("kind", "synthetic")),
        classes=int(ds_raw.get("classes", 10)),
        dim=int(ds_raw.get("dim", 64)),
        train_per_class=int(ds_raw.get("train_per_class", 100)),
        test_per_class=int(ds_raw.get("test_per_class", 40)),
        spread=float(ds_raw.get("spread", 0.1)),
        seed=int(ds_raw.get("seed", seed)),
        train_images=ds_raw.get("train_images"),
        train_labels=ds_raw.get("train_labels"),
        test_images=ds_raw.get("test_images"),
        test_labels=ds_raw.get("test_labels"),
        subset=int(ds_raw["subset"]) if ds_raw.get("subset") is not None else None,
    )

    target = _classifier_config(dict(doc["target_model"]), "target", seed + 1)

    denoisers = []
    for i, raw in enumerate(doc.get("denoisers", [])):
        raw = dict(raw)
        noise_raw = raw.get("noise")
        if not isinstance(noise_raw, dict):
            raise ConfigError(f"denoiser entry {i} needs a noise object")
        noise = NoiseSpec(
            kind=str(noise_raw["kind"]),
            magnitude=float(noise_raw["magnitude"]),
            seed=int(noise_raw.get("seed", seed + 100 + i)),
        )
        denoisers.append(
            DenoiserConfig(
                id=str(raw.get("id", f"denoiser{i}")),
                encoder=tuple(int(u) for u in raw.get("encoder", [32, 16])),
                decoder=tuple(int(u) for u in raw.get("decoder", [32])),
                noise=noise,
                reg_lambda=float(raw.get("reg_lambda", 1e-9)),
                train=_train_config(raw, fallback_seed=seed + 200 + i, defaults={"epochs": 100}),
            )
        )

    verifiers = [
        _classifier_config(dict(raw), f"v{i + 1}", seed + 300 + i)
        for i, raw in enumerate(doc.get("verifiers", []))
    ]

    attacks = []
    for i, raw in enumerate(doc.get("attacks", [])):
        raw = dict(raw)
        spec = AttackSpec(
            algorithm=str(raw["algorithm"]),
            epsilon=float(raw["epsilon"]),
            mode=str(raw.get("mode", "untargeted")),
            bim_alpha=float(raw["alpha"]) if raw.get("alpha") is not None else None,
            bim_iters=int(raw.get("iters", 10)),
        )
        attacks.append(
            AttackConfig(
                name=str(raw.get("name", f"{spec.algorithm}_{spec.mode}_{i}")),
                spec=spec,
                count_per_class=int(raw.get("count_per_class", 10)),
            )
        )

    div_raw = dict(doc.get("diversity", {}))
    diversity = DiversityConfig(
        selector=str(div_raw.get("selector", "all_examples")),
        threshold=float(div_raw.get("threshold", 0.6)),
        min_team_size=int(div_raw.get("min_team_size", 3)),
        max_team_size=int(div_raw["max_team_size"]) if div_raw.get("max_team_size") is not None else None,
        combination_cap=int(div_raw.get("combination_cap", 200_000)),
        kappa_form=str(div_raw.get("kappa_form", "product")),
    )

    pipelines = []
    for i, raw in enumerate(doc.get("pipelines", [])):
        raw = dict(raw)
        strategy = TeamStrategy(
            kind=str(raw.get("strategy", "best_kappa")),
            seed=int(raw.get("strategy_seed", seed + 400 + i)),
        )
        pipelines.append(
            PipelineConfig(
                name=str(raw.get("name", f"{raw.get('variant', 'crosslayer')}_{i}")),
                variant=str(raw["variant"]),
                strategy=strategy,
                tm_votes=bool(raw.get("tm_votes", True)),
                detection=bool(raw.get("detection", True)),
                vote=str(raw.get("vote", "soft")),
                confidence_floor=float(raw.get("confidence_floor", 0.0)),
                runtime_randomization=bool(raw.get("runtime_randomization", False)),
                seed=int(raw.get("seed", seed + 500 + i)),
            )
        )

    return ExperimentConfig(
        seed=seed,
        output_dir=str(doc["output_dir"]),
        dataset=dataset,
        target_model=target,
        denoisers=denoisers,
        verifiers=verifiers,
        attacks=attacks,
        diversity=diversity,
        pipelines=pipelines,
        prediction_matrix=doc.get("prediction_matrix"),
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    cfg = parse_config(doc)
    base = os.path.dirname(os.path.abspath(path))
    if not os.path.isabs(cfg.output_dir):
        cfg.output_dir = os.path.join(base, cfg.output_dir)
    for name in ("train_images", "train_labels", "test_images", "test_labels"):
        value = getattr(cfg.dataset, name)
        if value is not None and not os.path.isabs(value):
            setattr(cfg.dataset, name, os.path.join(base, value))
    if cfg.prediction_matrix is not None and not os.path.isabs(cfg.prediction_matrix):
        cfg.prediction_matrix = os.path.join(base, cfg.prediction_matrix)
    return cfg
