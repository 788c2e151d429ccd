"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
print. Criteria 6 and 8 drive the full CLI experiment on the committed
synthetic config (two independent runs in temporary directories).
"""

import csv
import itertools
import json
import os
import struct
import time
from contextlib import contextmanager

import numpy as np
import pytest

from ensdef.attacks import AttackResult, AttackSpec, Distortion, attack_batch, bim, evaluate_attack, fgsm
from ensdef.cli import main as cli_main
from ensdef.corruption import NoiseSpec
from ensdef.defense import DefenseOutcome, defend_many_to_many, defend_one_to_many, resolve_outcome
from ensdef.denoising import Denoiser, denoise
from ensdef.diversity import ContingencyTable, enumerate_teams, kappa
from ensdef.exceptions import BadMagicError, CountMismatchError, TruncatedFileError, UndefinedKappaError
from ensdef.metrics import defense_metrics
from ensdef.nncore import (
    LayerSpec,
    LossSpec,
    _loss_and_gradients,
    _prepare_targets,
    init_network,
    loss_and_input_gradient,
    predict_proba,
)
from ensdef.voting import ensemble_boost

from conftest import relative_error

CONFIG_PATH = os.path.join(os.path.dirname(__file__), "..", "configs", "synthetic_experiment.json")


@contextmanager
def criterion(number, name):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[CRITERION {number}] {name}: FAIL")
        raise
    print(f"[CRITERION {number}] {name}: PASS ({time.perf_counter() - start:.2f}s)")


# --------------------------------------------------------------------------
# Criterion 1: ensemble boost reproduces the reported majority-vote numbers.


def test_criterion_1_ensemble_boost():
    with criterion(1, "ensemble boost reproduction"):
        assert ensemble_boost(0.7, 5) == pytest.approx(0.83692, abs=5e-4)
        assert ensemble_boost(0.7, 101) >= 0.999


# --------------------------------------------------------------------------
# Criterion 2: kappa equals an independent direct-formula computation.


def direct_formula_kappa(counts):
    k = len(counts)
    n = sum(sum(row) for row in counts)
    p_o = sum(counts[i][i] for i in range(k)) / n
    p_e = sum(
        (sum(counts[i]) / n) * (sum(counts[j][i] for j in range(k)) / n) for i in range(k)
    )
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else None
    return (p_o - p_e) / (1.0 - p_e)


def test_criterion_2_kappa_oracle_equivalence():
    with criterion(2, "kappa oracle equivalence on 1000 random tables"):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 1000:
            k = int(rng.integers(2, 11))
            counts = rng.integers(0, 50, size=(k, k))
            if counts.sum() == 0:
                continue
            expected = direct_formula_kappa(counts.tolist())
            try:
                value = kappa(ContingencyTable(counts))
            except UndefinedKappaError:
                assert expected is None
                continue
            assert value == pytest.approx(expected, abs=1e-12)
            checked += 1
        assert kappa(ContingencyTable(np.diag([3, 9, 4]))) == 1.0
        assert kappa(ContingencyTable(np.array([[0, 50], [50, 0]]))) == -1.0


# --------------------------------------------------------------------------
# Criterion 3: team enumeration matches exhaustive subset enumeration.


def test_criterion_3_team_enumeration_oracle():
    with criterion(3, "team enumeration matches brute force (pools <= 6)"):
        rng = np.random.default_rng(7)
        for pool_size in (3, 4, 5, 6):
            ids = [f"m{i}" for i in range(pool_size)]
            matrix = np.full((pool_size, pool_size), np.nan)
            for i in range(pool_size):
                for j in range(i + 1, pool_size):
                    matrix[i, j] = matrix[j, i] = float(rng.uniform(-0.3, 1.0))
            for threshold in (0.2, 0.55, 1.0):
                for min_size, max_size in ((3, pool_size), (1, pool_size), (2, 3)):
                    if min_size > pool_size or max_size > pool_size:
                        continue
                    ranked = enumerate_teams(
                        ids, matrix, min_size=min_size, max_size=max_size, threshold=threshold
                    )
                    expected = []
                    for size in range(min_size, max_size + 1):
                        for combo in itertools.combinations(range(pool_size), size):
                            pairs = [matrix[a, b] for a, b in itertools.combinations(combo, 2)]
                            avg = float(np.mean(pairs)) if pairs else 0.0
                            if avg <= threshold:
                                expected.append((tuple(ids[i] for i in combo), avg))
                    expected.sort(key=lambda item: (item[1], item[0]))
                    assert [t.members for t in ranked.teams] == [m for m, _ in expected]
                    for team, (_, avg) in zip(ranked.teams, expected):
                        assert team.avg_kappa == pytest.approx(avg, abs=1e-15)


# --------------------------------------------------------------------------
# Criterion 4: analytic gradients vs central finite differences.


def _numeric_param_gradients(net, x, targets, loss, h=1e-5):
    t = _prepare_targets(net, targets, loss, x.shape[0])

    def evaluate():
        value, _, _, _ = _loss_and_gradients(net, x, t, loss)
        return value

    grads_w, grads_b = [], []
    for li in range(len(net.weights)):
        gw = np.zeros_like(net.weights[li])
        for idx in np.ndindex(*net.weights[li].shape):
            original = net.weights[li][idx]
            net.weights[li][idx] = original + h
            up = evaluate()
            net.weights[li][idx] = original - h
            down = evaluate()
            net.weights[li][idx] = original
            gw[idx] = (up - down) / (2 * h)
        grads_w.append(gw)
        gb = np.zeros_like(net.biases[li])
        for idx in np.ndindex(*net.biases[li].shape):
            original = net.biases[li][idx]
            net.biases[li][idx] = original + h
            up = evaluate()
            net.biases[li][idx] = original - h
            down = evaluate()
            net.biases[li][idx] = original
            gb[idx] = (up - down) / (2 * h)
        grads_b.append(gb)
    return grads_w, grads_b


def _input_clear_of_relu_kinks(net, x, margin=1e-3):
    # Central differences are invalid within h of a relu kink.
    from ensdef.nncore import _forward_batch

    _, caches = _forward_batch(net, x[None, :])
    for spec, (z, _) in zip(net.layers, caches):
        if spec.activation == "relu" and np.abs(z).min() < margin:
            return False
    return True


def test_criterion_4_gradient_correctness():
    with criterion(4, "analytic vs finite-difference gradients on 50 nets"):
        rng = np.random.default_rng(404)
        hidden_acts = ["sigmoid", "relu", "identity"]
        seen_activations = set()
        for trial in range(50):
            use_ce = trial % 2 == 0
            dim = int(rng.integers(2, 6))
            depth = int(rng.integers(1, 3))
            hidden = [
                LayerSpec(int(rng.integers(2, 6)), hidden_acts[int(rng.integers(3))])
                for _ in range(depth)
            ]
            if use_ce:
                k = int(rng.integers(2, 5))
                layers = hidden + [LayerSpec(k, "softmax")]
                loss = LossSpec("cross_entropy")
                targets = np.array([int(rng.integers(k))])
            else:
                out_act = hidden_acts[int(rng.integers(3))]
                layers = hidden + [LayerSpec(3, out_act)]
                loss = LossSpec("mse_frobenius", reg_lambda=float(rng.uniform(0, 1e-2)))
                targets = rng.uniform(0, 1, (1, 3))
            net = init_network(dim, layers, int(rng.integers(1_000_000)))
            seen_activations.update(spec.activation for spec in layers)

            x = rng.uniform(0.05, 0.95, dim)
            attempts = 0
            while not _input_clear_of_relu_kinks(net, x) and attempts < 20:
                x = rng.uniform(0.05, 0.95, dim)
                attempts += 1

            t = _prepare_targets(net, targets, loss, 1)
            _, dw, db, dx = _loss_and_gradients(net, x[None, :], t, loss)
            nw, nb = _numeric_param_gradients(net, x[None, :], targets, loss)
            for analytic, numeric in zip(dw + db, nw + nb):
                assert relative_error(analytic, numeric) < 1e-4
            target_arg = targets[0] if loss.kind == "cross_entropy" else targets[0]
            _, dx_single = loss_and_input_gradient(net, x, target_arg, loss)
            from conftest import numeric_input_gradient

            assert relative_error(dx_single, numeric_input_gradient(net, x, target_arg, loss)) < 1e-4
        assert seen_activations == {"sigmoid", "relu", "identity", "softmax"}


# --------------------------------------------------------------------------
# Criterion 5: metric identities over 10,000 randomized cases.


def _random_outcome(rng):
    flagged = bool(rng.integers(2))
    would_be = int(rng.integers(4))
    truth = int(rng.integers(4))
    label = None if flagged else would_be
    outcome = DefenseOutcome(
        flagged=flagged,
        label=label,
        confidence=None if flagged else 0.5,
        would_be_label=would_be,
        would_be_confidence=0.5,
        chosen_denoiser=None,
        denoiser_team=("d",),
        verifier_team=("v",),
    )
    return resolve_outcome(outcome, truth)


def test_criterion_5_metric_identities():
    with criterion(5, "metric identities over 10000 randomized cases"):
        rng = np.random.default_rng(55)
        start = time.perf_counter()
        cases = 0

        # DSR decomposition on random outcome batches (5000 cases).
        while cases < 5000:
            n = int(rng.integers(1, 30))
            outcomes = [_random_outcome(rng) for _ in range(n)]
            m = defense_metrics(outcomes, population="adversarial")
            assert m.dsr == m.psr + m.tsr
            assert 0.0 <= m.psr <= 1.0 and 0.0 <= m.tsr <= 1.0 and 0.0 <= m.fp <= 1.0
            cases += n

        # ASR/MR identities on synthetic attack batches (5000 cases).
        dummy_model = init_network(2, [LayerSpec(2, "softmax")], seed=0)
        zero = Distortion(0.0, 0.0, 0.0)
        seen = 0
        while seen < 5000:
            n = int(rng.integers(1, 40))
            truths = rng.integers(0, 4, n)
            preds = rng.integers(0, 4, n)
            originals = np.zeros((n, 2))

            untargeted = [
                AttackResult(
                    adversarial=originals[i],
                    target_class=None,
                    succeeded=bool(preds[i] != truths[i]),
                    misclassified=bool(preds[i] != truths[i]),
                    distortion=zero,
                    predicted=int(preds[i]),
                )
                for i in range(n)
            ]
            asr, mr = evaluate_attack(dummy_model, originals, untargeted)
            assert asr == mr

            targets = np.array([(t + 1 + rng.integers(3)) % 4 for t in truths])
            targeted = [
                AttackResult(
                    adversarial=originals[i],
                    target_class=int(targets[i]),
                    succeeded=bool(preds[i] == targets[i]),
                    misclassified=bool(preds[i] != truths[i]),
                    distortion=zero,
                    predicted=int(preds[i]),
                )
                for i in range(n)
            ]
            asr, mr = evaluate_attack(dummy_model, originals, targeted)
            assert mr >= asr
            seen += n
        assert time.perf_counter() - start < 5.0


# --------------------------------------------------------------------------
# Criteria 6 and 8: the desk-scale experiment, run twice through the CLI.

SUBCOMMANDS = ["train-target", "train-denoiser", "train-verifiers", "attack", "rank-teams", "defend", "report"]


def _run_experiment(out_dir):
    for command in SUBCOMMANDS:
        code = cli_main([command, "-c", CONFIG_PATH, "--output-dir", str(out_dir)])
        assert code == 0, f"{command} exited with {code}"


@pytest.fixture(scope="module")
def experiment_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("experiment")
    run_a = base / "run_a"
    run_b = base / "run_b"
    _run_experiment(run_a)
    _run_experiment(run_b)
    return run_a, run_b


def _read_defense_table(out_dir):
    table = {}
    with open(out_dir / "reports" / "report_defense.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            table[(row["population"], row["pipeline"])] = {
                k: float(row[k]) for k in ("psr", "tsr", "dsr", "fp")
            }
    return table


def test_criterion_6_desk_scale_defense_experiment(experiment_runs):
    run_a, _ = experiment_runs
    with criterion(6, "desk-scale defense experiment"):
        # (a) target model accuracy on held-out data.
        with open(run_a / "reports" / "report_models.csv", newline="") as fh:
            accuracy = {row["model"]: float(row["benign_accuracy"]) for row in csv.DictReader(fh)}
        assert accuracy["TM"] >= 0.95

        # (b) both attacks effective; iterative at least as strong.
        with open(run_a / "reports" / "report_attacks.csv", newline="") as fh:
            attacks = {row["attack"]: row for row in csv.DictReader(fh)}
        fgsm_asr = float(attacks["fgsm_ua"]["asr"])
        bim_asr = float(attacks["bim_ua"]["asr"])
        assert fgsm_asr >= 0.8 and bim_asr >= 0.8
        assert bim_asr >= fgsm_asr

        # (c) two denoisers (gaussian + salt-and-pepper) and >= 3 verifiers.
        assert (run_a / "models" / "denoiser_gauss.json").exists()
        assert (run_a / "models" / "denoiser_saltpepper.json").exists()
        verifier_count = sum(1 for name in os.listdir(run_a / "models") if name.startswith("verifier_"))
        assert verifier_count >= 3

        # (d) averaged over both attacks: the ensemble beats the best single
        # denoiser, and the cross-layer pipelines beat both single-stage
        # defenses (within the 0.02 slack).
        table = _read_defense_table(run_a)
        avg = lambda pipeline: table[("Average", pipeline)]["dsr"]
        best_single = max(avg("denoiser_gauss"), avg("denoiser_saltpepper"))
        assert avg("denoising_ensemble") >= best_single - 0.02
        single_stage_best = max(avg("denoising_ensemble"), avg("verification_ensemble"))
        assert avg("crosslayer_1m") >= single_stage_best - 0.02
        assert avg("crosslayer_mm") >= single_stage_best - 0.02

        # (e) benign prevention of the cross-layer defense tracks the
        # undefended target model.
        for pipeline in ("crosslayer_1m", "crosslayer_mm"):
            assert abs(table[("benign", pipeline)]["psr"] - accuracy["TM"]) <= 0.03


def test_criterion_8_full_cli_determinism(experiment_runs):
    run_a, run_b = experiment_runs
    with criterion(8, "full CLI experiment determinism"):
        report_dir = run_a / "reports"
        names = sorted(os.listdir(report_dir))
        assert names, "no reports emitted"
        for name in names:
            with open(report_dir / name, "rb") as fa, open(run_b / "reports" / name, "rb") as fb:
                assert fa.read() == fb.read(), f"report {name} differs between runs"


# --------------------------------------------------------------------------
# Criterion 7: pipeline reduction laws.


def test_criterion_7_pipeline_reduction_laws():
    with criterion(7, "pipeline reduction laws"):
        rng = np.random.default_rng(777)
        dim = 8
        encoder = init_network(dim, [LayerSpec(5, "sigmoid")], seed=1)
        decoder = init_network(5, [LayerSpec(dim, "sigmoid")], seed=2)
        denoiser = Denoiser(encoder=encoder, decoder=decoder, noise=NoiseSpec("gaussian", 0.1), id="d")
        verifier = init_network(dim, [LayerSpec(6, "relu"), LayerSpec(4, "softmax")], seed=3)
        tm = init_network(dim, [LayerSpec(4, "softmax")], seed=4)

        for _ in range(1000):
            x = rng.uniform(0, 1, dim)
            probs = predict_proba(verifier, denoise(denoiser, x)[None, :])[0]
            expected = int(np.argmax(probs))
            one = defend_one_to_many(x, [denoiser], tm, [("v", verifier)], tm_votes=False)
            many = defend_many_to_many(x, [denoiser], [("v", verifier)])
            assert one.label == many.label == expected
            assert one.confidence == float(probs.max())
            assert many.confidence == float(probs.max())

        for seed in range(10):
            net = init_network(dim, [LayerSpec(6, "sigmoid"), LayerSpec(3, "softmax")], seed=seed)
            x = rng.uniform(0, 1, dim)
            label = int(rng.integers(3))
            for mode in ("untargeted", "targeted_ml", "targeted_ll"):
                a = fgsm(net, x, label, AttackSpec("fgsm", 0.13, mode=mode))
                b = bim(net, x, label, AttackSpec("bim", 0.13, mode=mode, bim_alpha=0.13, bim_iters=1))
                assert np.array_equal(a.adversarial, b.adversarial)
                assert (a.succeeded, a.misclassified) == (b.succeeded, b.misclassified)


# --------------------------------------------------------------------------
# Criterion 9: IDX round trip and distinct failure modes.


def test_criterion_9_idx_round_trip(tmp_path):
    with criterion(9, "IDX round trip and distinct errors"):
        from ensdef.data import load_idx

        pixels = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3) * 10
        labels = [4, 9]
        images = struct.pack(">IIII", 0x00000803, 2, 3, 3) + pixels.tobytes()
        label_bytes = struct.pack(">II", 0x00000801, 2) + bytes(labels)
        (tmp_path / "img.idx").write_bytes(images)
        (tmp_path / "lab.idx").write_bytes(label_bytes)
        ds = load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")
        assert ds.n == 2 and ds.dim == 9
        assert np.array_equal(ds.X, pixels.reshape(2, 9) / 255.0)
        assert ds.y.tolist() == labels

        (tmp_path / "badmagic.idx").write_bytes(struct.pack(">IIII", 0x12345678, 2, 3, 3) + pixels.tobytes())
        with pytest.raises(BadMagicError):
            load_idx(tmp_path / "badmagic.idx", tmp_path / "lab.idx")

        (tmp_path / "short.idx").write_bytes(images[:-4])
        with pytest.raises(TruncatedFileError):
            load_idx(tmp_path / "short.idx", tmp_path / "lab.idx")

        (tmp_path / "lab3.idx").write_bytes(struct.pack(">II", 0x00000801, 3) + bytes([1, 2, 3]))
        with pytest.raises(CountMismatchError):
            load_idx(tmp_path / "img.idx", tmp_path / "lab3.idx")
