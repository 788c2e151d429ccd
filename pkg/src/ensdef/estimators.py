"""Scikit-learn style wrappers around the network engine.

``NetworkClassifier`` is a fit/predict multinomial classifier and
``DenoisingAutoencoder`` a fit/transform reconstruction model, so both
compose with pipelines, grid search, and the rest of the ecosystem. The
functional cores they delegate to live in :mod:`ensdef.nncore` and
:mod:`ensdef.denoising`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .corruption import NoiseSpec
from .denoising import denoise_batch, train_denoiser
from .exceptions import InputValidationError
from .nncore import (
    LayerSpec,
    LossSpec,
    TrainConfig,
    classifier_layers,
    init_network,
    predict_proba,
    train,
)


class NetworkClassifier(ClassifierMixin, BaseEstimator):
    """Dense softmax classifier trained with Adam on cross-entropy."""

    def __init__(
        self,
        hidden_layer_sizes=(32,),
        activation="relu",
        learning_rate=0.001,
        batch_size=256,
        epochs=50,
        seed=0,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            adam_beta1=self.beta1,
            adam_beta2=self.beta2,
            adam_eps=self.eps,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_indexed = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise InputValidationError("need at least two classes to fit a classifier")
        layers = classifier_layers(tuple(self.hidden_layer_sizes), self.activation, self.classes_.size)
        net = init_network(X.shape[1], layers, self.seed)
        self.network_ = train(net, X, y_indexed, LossSpec("cross_entropy"), self._train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        return predict_proba(self.network_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class DenoisingAutoencoder(TransformerMixin, BaseEstimator):
    """Reconstruction model trained on stochastically corrupted inputs.

    All layers use sigmoid activations; the final layer restores the input
    dimension so transformed data stays in [0, 1]. ``fit`` re-corrupts the
    training set every epoch from the stream seeded by ``noise_seed``.
    """

    def __init__(
        self,
        encoder_layer_sizes=(32, 16),
        decoder_layer_sizes=(32,),
        noise_kind="gaussian",
        noise_magnitude=0.3,
        noise_seed=0,
        reg_lambda=1e-9,
        learning_rate=0.001,
        batch_size=256,
        epochs=100,
        seed=0,
        name="denoiser",
    ):
        self.encoder_layer_sizes = encoder_layer_sizes
        self.decoder_layer_sizes = decoder_layer_sizes
        self.noise_kind = noise_kind
        self.noise_magnitude = noise_magnitude
        self.noise_seed = noise_seed
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.name = name

    def fit(self, X, y=None):
        X = check_array(X)
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise InputValidationError("denoiser training data must lie in [0, 1]")
        dim = X.shape[1]
        encoder = [LayerSpec(u, "sigmoid") for u in self.encoder_layer_sizes]
        decoder = [LayerSpec(u, "sigmoid") for u in self.decoder_layer_sizes]
        decoder.append(LayerSpec(dim, "sigmoid"))
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )
        noise = NoiseSpec(kind=self.noise_kind, magnitude=self.noise_magnitude, seed=self.noise_seed)
        self.denoiser_ = train_denoiser(
            X,
            encoder,
            decoder,
            noise,
            self.reg_lambda,
            cfg,
            denoiser_id=self.name,
        )
        self.n_features_in_ = dim
        return self

    def transform(self, X):
        check_is_fitted(self, "denoiser_")
        X = check_array(X)
        return denoise_batch(self.denoiser_, X)
