"""Minimal deterministic feed-forward network engine.

Dense layers only, manual backpropagation, Adam updates. The same engine
backs classifiers, denoising autoencoders, and input-gradient attacks.
All randomness flows through seeded ``numpy.random.Generator`` (PCG64)
instances, so identical seeds reproduce identical weight tensors bit for
bit on any platform with IEEE-754 doubles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import (
    ConfigError,
    DataFormatError,
    InputShapeError,
    InputValidationError,
    NumericOverflowError,
    TrainingDivergedError,
)

ACTIVATIONS = ("sigmoid", "relu", "softmax", "identity")
LOSS_KINDS = ("mse_frobenius", "cross_entropy")
MODEL_FORMAT_VERSION = 1


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # einsum keeps each output row's summation order independent of the
    # batch size; BLAS matmul does not, which would break the contract
    # that batched inference equals per-example inference exactly.
    return np.einsum("nd,dk->nk", a, b)


def _matmul_t(delta: np.ndarray, w: np.ndarray) -> np.ndarray:
    # delta @ w.T with the same row-stable reduction as _matmul.
    return np.einsum("nk,dk->nd", delta, w)


def _outer_sum(a_prev: np.ndarray, delta: np.ndarray) -> np.ndarray:
    # a_prev.T @ delta; reduces over the batch axis, order fixed per call.
    return np.einsum("nd,nk->dk", a_prev, delta)


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: output width plus activation tag."""

    units: int
    activation: str
    kind: str = "dense"

    def __post_init__(self):
        if self.kind != "dense":
            raise ConfigError(f"unsupported layer kind {self.kind!r}")
        if not isinstance(self.units, int) or self.units < 1:
            raise ConfigError(f"layer units must be a positive integer, got {self.units!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )


@dataclass(frozen=True)
class LossSpec:
    """Training objective. ``reg_lambda`` penalises the squared Frobenius
    norm of the weight matrices and applies to the reconstruction loss only."""

    kind: str
    reg_lambda: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.reg_lambda < 0:
            raise ConfigError("reg_lambda must be non-negative")
        if self.kind == "cross_entropy" and self.reg_lambda != 0.0:
            raise ConfigError("reg_lambda is only supported with the mse_frobenius loss")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyperparameters. Defaults follow the reference setup:
    Adam with learning rate 1e-3 and batch size 256."""

    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ConfigError("adam betas must lie strictly between 0 and 1")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")


@dataclass
class Network:
    """A feed-forward stack of dense layers with explicit weights.

    ``weights[i]`` has shape ``(fan_in, units)`` and ``biases[i]`` shape
    ``(units,)``. Immutable by convention during inference; training
    operates on a private copy.
    """

    input_dim: int
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].units

    def copy(self) -> "Network":
        return Network(
            input_dim=self.input_dim,
            layers=list(self.layers),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        if len(self.layers) != len(self.weights) or len(self.layers) != len(self.biases):
            raise ConfigError("layers, weights, and biases must have equal length")
        fan_in = self.input_dim
        for i, (spec, w, b) in enumerate(zip(self.layers, self.weights, self.biases)):
            if spec.activation == "softmax" and i != len(self.layers) - 1:
                raise ConfigError("softmax is only allowed as the final layer")
            if w.shape != (fan_in, spec.units):
                raise ConfigError(
                    f"layer {i} weight shape {w.shape} does not chain with fan-in {fan_in}"
                )
            if b.shape != (spec.units,):
                raise ConfigError(f"layer {i} bias shape {b.shape} != ({spec.units},)")
            fan_in = spec.units
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericOverflowError(f"layer {i} holds non-finite weights")


def init_network(input_dim: int, layers: Sequence[LayerSpec], seed: int) -> Network:
    """Build a network with weights drawn uniformly from
    ``[-1/sqrt(fan_in), +1/sqrt(fan_in)]`` and zero biases."""
    if input_dim < 1:
        raise ConfigError("input_dim must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = input_dim
    for spec in layers:
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, spec.units)))
        biases.append(np.zeros(spec.units))
        fan_in = spec.units
    net = Network(input_dim=input_dim, layers=list(layers), weights=weights, biases=biases)
    net.validate()
    return net


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "sigmoid":
        return _sigmoid(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        return _softmax(z)
    return z  # identity


def _activation_backward(d_a: np.ndarray, z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    """Map the gradient w.r.t. the activation output onto the pre-activation."""
    if activation == "sigmoid":
        return d_a * a * (1.0 - a)
    if activation == "relu":
        return d_a * (z > 0)
    if activation == "softmax":
        return (d_a - (d_a * a).sum(axis=1, keepdims=True)) * a
    return d_a  # identity


def _as_batch(x: np.ndarray, dim: int, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InputShapeError(f"{name} must have {dim} features, got shape {np.shape(x)}")
    if not np.isfinite(arr).all():
        raise InputValidationError(f"{name} contains non-finite entries")
    return arr


def _forward_batch(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    caches = []
    a = x
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        z = _matmul(a, w) + b
        a = _apply_activation(z, spec.activation)
        caches.append((z, a))
    return a, caches


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Run one example through the network.

    Returns the output vector and the per-layer cache of (pre-activation,
    activation) pairs, each with a leading batch axis of size one.
    """
    batch = _as_batch(x, net.input_dim)
    out, caches = _forward_batch(net, batch)
    if not np.isfinite(out).all():
        raise NumericOverflowError("forward pass produced non-finite output")
    return out[0], caches


def predict_proba(net: Network, x: np.ndarray) -> np.ndarray:
    """Batched forward pass returning one output row per example."""
    batch = _as_batch(x, net.input_dim)
    out, _ = _forward_batch(net, batch)
    if not np.isfinite(out).all():
        raise NumericOverflowError("forward pass produced non-finite output")
    return out


def predict_labels(net: Network, x: np.ndarray) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index."""
    return np.argmax(predict_proba(net, x), axis=1)


def _prepare_targets(net: Network, targets, loss: LossSpec, n: int):
    if loss.kind == "cross_entropy":
        if net.layers[-1].activation != "softmax":
            raise ConfigError("cross_entropy requires a softmax output layer")
        t = np.asarray(targets)
        if t.ndim == 0:
            t = t[None]
        if t.ndim != 1 or t.shape[0] != n:
            raise InputShapeError("cross_entropy targets must be one label per example")
        t = t.astype(int)
        if (t < 0).any() or (t >= net.output_dim).any():
            raise InputValidationError("class labels out of range")
        return t
    t = np.asarray(targets, dtype=float)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != (n, net.output_dim):
        raise InputShapeError(
            f"mse targets must have shape ({n}, {net.output_dim}), got {t.shape}"
        )
    return t


def _loss_and_gradients(net: Network, x: np.ndarray, targets, loss: LossSpec):
    """Loss plus gradients for a batch.

    Returns ``(loss_value, d_weights, d_biases, d_input)``. The data term is
    averaged over examples; the Frobenius term adds
    ``reg_lambda/2 * sum(||W||_F^2)`` over weight matrices (biases excluded).
    """
    n = x.shape[0]
    out, caches = _forward_batch(net, x)
    if not np.isfinite(out).all():
        raise NumericOverflowError("forward pass produced non-finite output")

    if loss.kind == "cross_entropy":
        labels = targets
        p_true = out[np.arange(n), labels]
        with np.errstate(divide="ignore"):
            loss_value = float(-np.mean(np.log(p_true)))
        if not np.isfinite(loss_value):
            raise NumericOverflowError("cross-entropy loss is non-finite")
        # Fused softmax + cross-entropy gradient w.r.t. the final logits.
        delta = out.copy()
        delta[np.arange(n), labels] -= 1.0
        delta /= n
    else:
        diff = out - targets
        with np.errstate(over="ignore"):
            loss_value = float(np.mean(np.sum(diff * diff, axis=1)))
        if not np.isfinite(loss_value):
            raise NumericOverflowError("reconstruction loss is non-finite")
        if loss.reg_lambda > 0.0:
            loss_value += 0.5 * loss.reg_lambda * sum(float(np.sum(w * w)) for w in net.weights)
        d_a = 2.0 * diff / n
        z_last, a_last = caches[-1]
        delta = _activation_backward(d_a, z_last, a_last, net.layers[-1].activation)

    d_weights = [None] * len(net.layers)
    d_biases = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        a_prev = x if i == 0 else caches[i - 1][1]
        d_weights[i] = _outer_sum(a_prev, delta)
        if loss.kind == "mse_frobenius" and loss.reg_lambda > 0.0:
            d_weights[i] += loss.reg_lambda * net.weights[i]
        d_biases[i] = delta.sum(axis=0)
        d_upstream = _matmul_t(delta, net.weights[i])
        if i > 0:
            z_prev, a_prev_act = caches[i - 1]
            delta = _activation_backward(d_upstream, z_prev, a_prev_act, net.layers[i - 1].activation)
        else:
            d_input = d_upstream
    return loss_value, d_weights, d_biases, d_input


def loss_and_input_gradient(net: Network, x: np.ndarray, target, loss: LossSpec) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to a single input vector."""
    batch = _as_batch(x, net.input_dim)
    targets = _prepare_targets(net, target, loss, batch.shape[0])
    loss_value, _, _, d_input = _loss_and_gradients(net, batch, targets, loss)
    if not np.isfinite(d_input).all():
        raise NumericOverflowError("input gradient is non-finite")
    return loss_value, d_input[0]


class _AdamState:
    def __init__(self, net: Network):
        self.m_w = [np.zeros_like(w) for w in net.weights]
        self.v_w = [np.zeros_like(w) for w in net.weights]
        self.m_b = [np.zeros_like(b) for b in net.biases]
        self.v_b = [np.zeros_like(b) for b in net.biases]
        self.t = 0

    def step(self, net: Network, d_weights, d_biases, cfg: TrainConfig) -> None:
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for i in range(len(net.weights)):
            for params, grad, m, v in (
                (net.weights, d_weights, self.m_w, self.v_w),
                (net.biases, d_biases, self.m_b, self.v_b),
            ):
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i]
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i]
                m_hat = m[i] / corr1
                v_hat = v[i] / corr2
                params[i] = params[i] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train(
    net: Network,
    inputs: np.ndarray,
    targets,
    loss: LossSpec,
    cfg: TrainConfig,
    *,
    epoch_inputs: Callable[[int], np.ndarray] | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> Network:
    """Train a copy of ``net`` and return it.

    The batch order is shuffled each epoch from ``cfg.seed``; the last
    partial batch is kept. ``epoch_inputs(epoch)``, when given, supplies a
    fresh input matrix per epoch (targets stay fixed) — used for per-epoch
    re-corruption in denoiser training. ``callback(epoch, mean_loss)`` is
    invoked after every epoch. With ``epochs == 0`` the returned network is
    a bit-for-bit copy of the input network.
    """
    x = _as_batch(inputs, net.input_dim, name="inputs")
    n = x.shape[0]
    if n == 0:
        raise InputValidationError("training data must be non-empty")
    t = _prepare_targets(net, targets, loss, n)

    trained = net.copy()
    state = _AdamState(trained)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        x_epoch = x
        if epoch_inputs is not None:
            x_epoch = _as_batch(epoch_inputs(epoch), net.input_dim, name="epoch inputs")
            if x_epoch.shape[0] != n:
                raise InputShapeError("epoch_inputs must preserve the number of examples")
        perm = rng.permutation(n)
        loss_sum = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            try:
                loss_value, d_w, d_b, _ = _loss_and_gradients(trained, x_epoch[idx], t[idx], loss)
            except NumericOverflowError as exc:
                raise TrainingDivergedError(epoch, f"training diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(epoch)
            state.step(trained, d_w, d_b, cfg)
            loss_sum += loss_value
            n_batches += 1
        if callback is not None:
            callback(epoch, loss_sum / n_batches)
    trained.validate()
    return trained


def classifier_layers(hidden: Sequence[int], activation: str, n_classes: int) -> list[LayerSpec]:
    """Hidden layers with the given activation topped by a softmax layer."""
    if n_classes < 2:
        raise ConfigError("a classifier needs at least two classes")
    specs = [LayerSpec(units, activation) for units in hidden]
    specs.append(LayerSpec(n_classes, "softmax"))
    return specs


def network_to_document(net: Network) -> dict:
    """Serialisable description: layer specs plus row-major weight arrays."""
    net.validate()
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dim": net.input_dim,
        "layers": [
            {"kind": spec.kind, "units": spec.units, "activation": spec.activation}
            for spec in net.layers
        ],
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def network_from_document(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise DataFormatError("model document must be a mapping")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataFormatError(f"unsupported model format_version {version!r}")
    try:
        layers = [
            LayerSpec(units=int(spec["units"]), activation=spec["activation"], kind=spec.get("kind", "dense"))
            for spec in doc["layers"]
        ]
        net = Network(
            input_dim=int(doc["input_dim"]),
            layers=layers,
            weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        )
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed model document: {exc}") from exc
    net.validate()
    return net


def save_network(net: Network, path) -> None:
    """Write the model document as JSON. Float round-trips are value-exact."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_document(net), fh)


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_document(json.load(fh))
