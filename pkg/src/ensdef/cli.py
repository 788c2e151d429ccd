"""Command-line workflow driver.

Subcommands mirror the experimental sequence: train the target model,
train denoisers and verifiers, generate adversarial sets, rank ensemble
teams by kappa diversity, run the defense pipelines, and aggregate the
reports. Every subcommand reads one versioned JSON config and writes only
under the configured output directory. Artifacts produced earlier in the
sequence are required by later steps; a missing artifact error names the
subcommand that produces it.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .attacks import (
    AdversarialSet,
    attack_batch,
    build_adversarial_set,
    load_adversarial_set,
    save_adversarial_set,
)
from .config import ExperimentConfig, load_config
from .defense import DefensePipeline, TeamSource, run_defense_batch, run_reference_batch
from .denoising import load_denoiser, save_denoiser, train_denoiser
from .diversity import (
    KappaRankedList,
    RankedTeam,
    all_size_eligible_teams,
    enumerate_teams,
    pairwise_kappa_matrix,
)
from .exceptions import (
    ConfigError,
    DataFormatError,
    EnsdefError,
    MissingArtifactError,
    NoEligibleTeamError,
    NumericOverflowError,
    UndefinedMetricError,
)
from .data import Dataset, generate_synthetic, load_idx, load_prediction_matrix, stratified_split
from .metrics import defense_metrics, transferability_matrix
from .nncore import (
    LayerSpec,
    LossSpec,
    Network,
    classifier_layers,
    init_network,
    load_network,
    predict_labels,
    predict_proba,
    save_network,
    train,
)
from .reporting import (
    read_outcome_log,
    write_attack_summary_csv,
    write_defense_report_csv,
    write_kappa_matrix_csv,
    write_model_accuracy_csv,
    write_outcome_log,
    write_ranked_teams_csv,
    write_transferability_csv,
)
from .voting import VerifierPool


class Paths:
    """Artifact layout under the configured output directory."""

    def __init__(self, output_dir: str):
        self.root = output_dir

    def target_model(self):
        return os.path.join(self.root, "models", "target_model.json")

    def denoiser(self, denoiser_id: str):
        return os.path.join(self.root, "models", f"denoiser_{denoiser_id}.json")

    def verifier(self, verifier_id: str):
        return os.path.join(self.root, "models", f"verifier_{verifier_id}.json")

    def attack_dir(self, name: str):
        return os.path.join(self.root, "attacks", name)

    def kappa_matrix(self):
        return os.path.join(self.root, "diversity", "kappa_matrix.csv")

    def ranked_teams(self):
        return os.path.join(self.root, "diversity", "ranked_teams.csv")

    def outcome_log(self, pipeline: str, population: str):
        return os.path.join(self.root, "outcomes", f"{pipeline}__{population}.jsonl")

    def report(self, name: str):
        return os.path.join(self.root, "reports", name)


def _require(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(path, producer)
    return path


def _load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        full = generate_synthetic(
            n_classes=ds.classes,
            dim=ds.dim,
            per_class=ds.train_per_class + ds.test_per_class,
            spread=ds.spread,
            seed=ds.seed,
        )
        return stratified_split(full, ds.train_per_class)
    train_ds = load_idx(ds.train_images, ds.train_labels)
    test_ds = load_idx(ds.test_images, ds.test_labels)
    if ds.subset is not None:
        train_ds = Dataset(train_ds.X[: ds.subset], train_ds.y[: ds.subset], train_ds.n_classes)
        test_ds = Dataset(test_ds.X[: ds.subset], test_ds.y[: ds.subset], test_ds.n_classes)
    return train_ds, test_ds


def _accuracy(net: Network, ds: Dataset) -> float:
    return float(np.mean(predict_labels(net, ds.X) == ds.y))


def _train_classifier(train_ds: Dataset, ccfg, n_classes: int) -> Network:
    x, y = train_ds.X, train_ds.y
    if ccfg.train_fraction < 1.0:
        size = int(ccfg.train_fraction * train_ds.n)
        sub = np.random.default_rng(ccfg.train.seed).choice(train_ds.n, size=size, replace=False)
        x, y = x[sub], y[sub]
    layers = classifier_layers(ccfg.hidden, ccfg.activation, n_classes)
    net = init_network(train_ds.dim, layers, ccfg.train.seed)
    return train(net, x, y, LossSpec("cross_entropy"), ccfg.train)


def cmd_train_target(cfg: ExperimentConfig, paths: Paths) -> None:
    train_ds, test_ds = _load_splits(cfg)
    tm = _train_classifier(train_ds, cfg.target_model, train_ds.n_classes)
    save_network(tm, paths.target_model())
    print(f"target model saved; benign accuracy {_accuracy(tm, test_ds):.4f}")


def cmd_train_denoiser(cfg: ExperimentConfig, paths: Paths) -> None:
    if not cfg.denoisers:
        raise ConfigError("no denoisers configured")
    train_ds, _ = _load_splits(cfg)
    for dcfg in cfg.denoisers:
        encoder = [LayerSpec(u, "sigmoid") for u in dcfg.encoder]
        decoder = [LayerSpec(u, "sigmoid") for u in dcfg.decoder] + [LayerSpec(train_ds.dim, "sigmoid")]
        denoiser = train_denoiser(
            train_ds.X,
            encoder,
            decoder,
            dcfg.noise,
            dcfg.reg_lambda,
            dcfg.train,
            denoiser_id=dcfg.id,
        )
        save_denoiser(denoiser, paths.denoiser(dcfg.id))
        print(f"denoiser {dcfg.id} saved ({dcfg.noise.kind}, magnitude {dcfg.noise.magnitude})")


def cmd_train_verifiers(cfg: ExperimentConfig, paths: Paths) -> None:
    if not cfg.verifiers:
        raise ConfigError("no verifiers configured")
    train_ds, test_ds = _load_splits(cfg)
    for vcfg in cfg.verifiers:
        net = _train_classifier(train_ds, vcfg, train_ds.n_classes)
        save_network(net, paths.verifier(vcfg.id))
        print(f"verifier {vcfg.id} saved; benign accuracy {_accuracy(net, test_ds):.4f}")


def _select_attack_examples(tm: Network, test_ds: Dataset, count_per_class: int) -> tuple[np.ndarray, np.ndarray]:
    """First correctly classified test examples, up to count_per_class per class."""
    predicted = predict_labels(tm, test_ds.X)
    keep = []
    for k in range(test_ds.n_classes):
        members = np.flatnonzero((test_ds.y == k) & (predicted == test_ds.y))
        keep.extend(members[:count_per_class])
    keep = np.asarray(sorted(keep), dtype=int)
    return test_ds.X[keep], test_ds.y[keep]


def cmd_attack(cfg: ExperimentConfig, paths: Paths) -> None:
    if not cfg.attacks:
        raise ConfigError("no attacks configured")
    tm = load_network(_require(paths.target_model(), "train-target"))
    _, test_ds = _load_splits(cfg)
    for acfg in cfg.attacks:
        x, y = _select_attack_examples(tm, test_ds, acfg.count_per_class)
        if x.shape[0] == 0:
            raise ConfigError(f"attack {acfg.name}: no correctly classified test examples to attack")
        results = attack_batch(tm, x, y, acfg.spec)
        aset = build_adversarial_set(acfg.name, acfg.spec, y, results)
        save_adversarial_set(aset, paths.attack_dir(acfg.name))
        asr = float(np.mean(aset.succeeded))
        mr = float(np.mean(aset.misclassified))
        print(f"attack {acfg.name}: n={aset.n} asr={asr:.3f} mr={mr:.3f}")


def _verifier_pool(cfg: ExperimentConfig, paths: Paths) -> VerifierPool:
    members = []
    for vcfg in cfg.verifiers:
        net = load_network(_require(paths.verifier(vcfg.id), "train-verifiers"))
        members.append((vcfg.id, net))
    return VerifierPool(members=members)


def _team_accuracy(pool: VerifierPool, team: tuple[str, ...], test_ds: Dataset) -> float:
    members = pool.subset(team)
    probs = [predict_proba(net, test_ds.X) for _, net in members]
    mean = np.mean(probs, axis=0)
    return float(np.mean(np.argmax(mean, axis=1) == test_ds.y))


def cmd_rank_teams(cfg: ExperimentConfig, paths: Paths) -> None:
    div = cfg.diversity
    if cfg.prediction_matrix is not None:
        matrix_source = load_prediction_matrix(cfg.prediction_matrix)
        columns = {m: labels for m, labels in matrix_source.label_columns().items()}
        ids, matrix = pairwise_kappa_matrix(columns, div.selector, expected=div.kappa_form)
        team_ids = ids
        sub_matrix = matrix
        accuracies = None
    else:
        if not cfg.verifiers:
            raise ConfigError("rank-teams needs verifiers or an external prediction matrix")
        _, test_ds = _load_splits(cfg)
        tm = load_network(_require(paths.target_model(), "train-target"))
        pool = _verifier_pool(cfg, paths)
        columns = {"TM": predict_labels(tm, test_ds.X)}
        for vid, net in pool.members:
            columns[vid] = predict_labels(net, test_ds.X)
        ids, matrix = pairwise_kappa_matrix(columns, div.selector, test_ds.n_classes, expected=div.kappa_form)
        # TM appears in the matrix for reference but never joins a team.
        team_ids = ids[1:]
        sub_matrix = matrix[1:, 1:]
    write_kappa_matrix_csv(ids, matrix, paths.kappa_matrix())

    ranked = enumerate_teams(
        team_ids,
        sub_matrix,
        min_size=div.min_team_size,
        max_size=div.max_team_size,
        threshold=div.threshold,
        combination_cap=div.combination_cap,
    )
    holdout = None
    if cfg.prediction_matrix is None:
        holdout = {team.members: _team_accuracy(pool, team.members, test_ds) for team in ranked.teams}
    write_ranked_teams_csv(ranked, paths.ranked_teams(), holdout_accuracy=holdout)
    if not ranked.teams:
        print("warning: kappa-ranked list is empty at this threshold", file=sys.stderr)
    print(f"ranked {len(ranked.teams)} teams (threshold {div.threshold})")


def _read_ranked_teams(path) -> tuple[KappaRankedList, dict[tuple[str, ...], float] | None]:
    teams = []
    accuracies: dict[tuple[str, ...], float] = {}
    has_accuracy = False
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            members = tuple(row["team"].split("+"))
            teams.append(RankedTeam(members=members, avg_kappa=float(row["avg_kappa"])))
            if row.get("holdout_accuracy") not in (None, ""):
                has_accuracy = True
                accuracies[members] = float(row["holdout_accuracy"])
    ranked = KappaRankedList(teams=teams, threshold=float("nan"), min_team_size=0)
    return ranked, (accuracies if has_accuracy else None)


def _load_attack_populations(cfg: ExperimentConfig, paths: Paths) -> list[AdversarialSet]:
    sets = []
    for acfg in cfg.attacks:
        directory = paths.attack_dir(acfg.name)
        _require(os.path.join(directory, "manifest.json"), "attack")
        sets.append(load_adversarial_set(directory))
    return sets


def cmd_defend(cfg: ExperimentConfig, paths: Paths) -> None:
    tm = load_network(_require(paths.target_model(), "train-target"))
    if not cfg.denoisers:
        raise ConfigError("defend needs at least one configured denoiser")
    denoisers = {
        dcfg.id: load_denoiser(_require(paths.denoiser(dcfg.id), "train-denoiser")) for dcfg in cfg.denoisers
    }
    pool = _verifier_pool(cfg, paths)
    _, test_ds = _load_splits(cfg)

    ranked, holdout = (None, None)
    if any(p.strategy.kind in ("rand_kappa", "best_kappa") for p in cfg.pipelines):
        ranked, holdout = _read_ranked_teams(_require(paths.ranked_teams(), "rank-teams"))
    pool_teams = all_size_eligible_teams(
        pool.ids,
        min_size=min(cfg.diversity.min_team_size, len(pool.ids)),
        max_size=cfg.diversity.max_team_size,
    )

    populations: list[tuple[str, np.ndarray, np.ndarray, str]] = [
        ("benign", test_ds.X, test_ds.y, "benign")
    ]
    for aset in _load_attack_populations(cfg, paths):
        subset = aset.successful_subset()
        if subset.n == 0:
            print(f"warning: attack {aset.name} has no successful examples; skipped", file=sys.stderr)
            continue
        populations.append((aset.name, subset.adversarial, subset.true_labels, "adversarial"))

    denoiser_ids = tuple(denoisers.keys())
    crosslayer: list[tuple[str, DefensePipeline]] = []
    for pcfg in cfg.pipelines:
        verifier_source = TeamSource.from_ranked(ranked, pcfg.strategy, holdout_accuracy=holdout, pool=pool_teams)
        pipeline = DefensePipeline(
            variant=pcfg.variant,
            target_model=tm,
            denoisers=denoisers,
            verifier_pool=pool,
            denoiser_source=TeamSource.from_fixed(denoiser_ids),
            verifier_source=verifier_source,
            tm_votes=pcfg.tm_votes,
            detection=pcfg.detection,
            vote=pcfg.vote,
            confidence_floor=pcfg.confidence_floor,
            runtime_randomization=pcfg.runtime_randomization,
            seed=pcfg.seed,
        )
        crosslayer.append((pcfg.name, pipeline))

    # The verification-only baseline uses the first pipeline's team draw so
    # the report compares the same verifier team across columns.
    if crosslayer:
        first = crosslayer[0][1]
        verification_team = pool.subset(
            first.verifier_source.draw(np.random.default_rng([first.seed, 0]))
        )
    else:
        verification_team = pool.members

    for population, x, y, _kind in populations:
        for dcfg in cfg.denoisers:
            outcomes = run_reference_batch(
                "single_denoiser", x, y, target_model=tm, denoiser=denoisers[dcfg.id]
            )
            write_outcome_log(
                outcomes,
                paths.outcome_log(f"denoiser_{dcfg.id}", population),
                pipeline=f"denoiser_{dcfg.id}",
                population=population,
            )
        outcomes = run_reference_batch(
            "denoising_ensemble",
            x,
            y,
            target_model=tm,
            denoisers=list(denoisers.values()),
            seed=cfg.seed,
        )
        write_outcome_log(
            outcomes,
            paths.outcome_log("denoising_ensemble", population),
            pipeline="denoising_ensemble",
            population=population,
        )
        outcomes = run_reference_batch("verification_ensemble", x, y, verifiers=verification_team)
        write_outcome_log(
            outcomes,
            paths.outcome_log("verification_ensemble", population),
            pipeline="verification_ensemble",
            population=population,
        )
        for name, pipeline in crosslayer:
            outcomes = run_defense_batch(pipeline, x, y)
            write_outcome_log(
                outcomes, paths.outcome_log(name, population), pipeline=name, population=population
            )
        print(f"defended population {population} (n={x.shape[0]})")


def _pipeline_names(cfg: ExperimentConfig) -> list[str]:
    names = [f"denoiser_{d.id}" for d in cfg.denoisers]
    names += ["denoising_ensemble", "verification_ensemble"]
    names += [p.name for p in cfg.pipelines]
    return names


def cmd_report(cfg: ExperimentConfig, paths: Paths) -> None:
    tm = load_network(_require(paths.target_model(), "train-target"))
    _, test_ds = _load_splits(cfg)

    adversarial_sets = _load_attack_populations(cfg, paths)
    populations = ["benign"] + [a.name for a in adversarial_sets]

    rows = []
    for population in populations:
        kind = "benign" if population == "benign" else "adversarial"
        for pipeline in _pipeline_names(cfg):
            log_path = paths.outcome_log(pipeline, population)
            if not os.path.exists(log_path):
                if kind == "adversarial":
                    continue  # population was skipped at defend time
                raise MissingArtifactError(log_path, "defend")
            _, outcomes = read_outcome_log(log_path)
            rows.append((population, pipeline, defense_metrics(outcomes, population=kind)))
    write_defense_report_csv(
        rows, paths.report("report_defense.csv"), attack_names=[a.name for a in adversarial_sets]
    )

    models = [("TM", tm)]
    models += [(vid, net) for vid, net in _verifier_pool(cfg, paths).members]
    successful = [a.successful_subset() for a in adversarial_sets if a.misclassified.any()]
    if successful:
        table = transferability_matrix(successful, models)
        write_transferability_csv(table, paths.report("report_transferability.csv"))

    attack_rows = []
    for aset in adversarial_sets:
        attack_rows.append(
            {
                "attack": aset.name,
                "asr": float(np.mean(aset.succeeded)),
                "mr": float(np.mean(aset.misclassified)),
                "mean_l0_fraction": float(np.mean(aset.distortions[:, 0])),
                "mean_l2": float(np.mean(aset.distortions[:, 1])),
                "mean_linf": float(np.mean(aset.distortions[:, 2])),
                "n": aset.n,
                "n_misclassified": int(aset.misclassified.sum()),
            }
        )
    write_attack_summary_csv(attack_rows, paths.report("report_attacks.csv"))

    accuracy_rows = [(model_id, _accuracy(net, test_ds)) for model_id, net in models]
    write_model_accuracy_csv(accuracy_rows, paths.report("report_models.csv"))
    print(f"reports written under {os.path.join(paths.root, 'reports')}")


_HANDLERS = {
    "train-target": cmd_train_target,
    "train-denoiser": cmd_train_denoiser,
    "train-verifiers": cmd_train_verifiers,
    "attack": cmd_attack,
    "rank-teams": cmd_rank_teams,
    "defend": cmd_defend,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensdef",
        description="Cross-layer ensemble defense workflow driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in _HANDLERS.items():
        p = sub.add_parser(name, help=handler.__doc__)
        p.add_argument("--config", "-c", required=True, help="path to the experiment config JSON")
        p.add_argument(
            "--output-dir",
            default=None,
            help="override the config's output directory (or set ENSDEF_OUTPUT_DIR)",
        )
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        override = args.output_dir or os.environ.get("ENSDEF_OUTPUT_DIR")
        if override:
            cfg.output_dir = os.path.abspath(override)
        args.handler(cfg, Paths(cfg.output_dir))
    except MissingArtifactError as exc:
        print(f"error[missing-artifact]: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, NoEligibleTeamError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"error[data-format]: {exc}", file=sys.stderr)
        return 4
    except (NumericOverflowError, UndefinedMetricError) as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 5
    except EnsdefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
