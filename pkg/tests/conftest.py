import numpy as np
import pytest

from ensdef.corruption import NoiseSpec
from ensdef.denoising import Denoiser
from ensdef.nncore import (
    LayerSpec,
    LossSpec,
    Network,
    TrainConfig,
    init_network,
    loss_and_input_gradient,
    train,
)


def constant_denoiser(target, denoiser_id):
    """A denoiser whose decoder ignores the input and emits ``target``.

    sigmoid(logit(t)) == t, so zero weights plus a logit bias pin the output.
    """
    target = np.asarray(target, dtype=float)
    dim = target.size
    logits = np.log(target / (1.0 - target))
    encoder = Network(
        input_dim=dim,
        layers=[LayerSpec(2, "sigmoid")],
        weights=[np.zeros((dim, 2))],
        biases=[np.zeros(2)],
    )
    decoder = Network(
        input_dim=2,
        layers=[LayerSpec(dim, "sigmoid")],
        weights=[np.zeros((2, dim))],
        biases=[logits],
    )
    return Denoiser(encoder=encoder, decoder=decoder, noise=NoiseSpec("masking", 0.0), id=denoiser_id)


def scaled_argmax_classifier(dim, scale=40.0):
    """Softmax over ``scale`` times the input: the label is argmax(x)."""
    return Network(
        input_dim=dim,
        layers=[LayerSpec(dim, "softmax")],
        weights=[np.eye(dim) * scale],
        biases=[np.zeros(dim)],
    )


def numeric_input_gradient(net, x, target, loss, h=1e-5):
    """Central finite differences through the public loss evaluation."""
    grad = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        up[i] += h
        down = x.copy()
        down[i] -= h
        loss_up, _ = loss_and_input_gradient(net, up, target, loss)
        loss_down, _ = loss_and_input_gradient(net, down, target, loss)
        grad[i] = (loss_up - loss_down) / (2.0 * h)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + 1e-12)


@pytest.fixture(scope="session")
def blob_classifier():
    """A small classifier trained on separable 2-class blobs, plus its data."""
    from ensdef.data import generate_synthetic, stratified_split

    full = generate_synthetic(n_classes=3, dim=8, per_class=60, spread=0.05, seed=42)
    train_ds, test_ds = stratified_split(full, 40)
    net = init_network(8, [LayerSpec(12, "relu"), LayerSpec(3, "softmax")], seed=7)
    cfg = TrainConfig(learning_rate=0.01, batch_size=64, epochs=60, seed=7)
    trained = train(net, train_ds.X, train_ds.y, LossSpec("cross_entropy"), cfg)
    return trained, train_ds, test_ds
