"""scikit-learn style front ends for the two clustering pipelines.

``ResidualSubspaceClustering`` wraps the full workflow (pretrain the
convolutional encoder/decoder, fine-tune with the self-expressive layer,
spectrally cluster the learned coefficients). ``LeastSquaresSubspaceClustering``
is the closed-form ridge baseline over raw features. Both follow the usual
``fit`` / ``fit_predict`` contract and expose ``labels_``,
``representation_matrix_`` and ``affinity_`` after fitting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .baselines import RidgeProblem, ridge_closed_form
from .cluster import build_affinity, spectral_cluster
from .errors import ConfigurationError
from .model import Architecture
from .train import TrainConfig, finetune, pretrain


class LeastSquaresSubspaceClustering(BaseEstimator, ClusterMixin):
    """Ridge-regularized self-expression with spectral clustering.

    ``fit`` accepts either a (n_samples, n_features) matrix or a stack of
    images shaped (n_samples, channels, height, width); images are
    flattened per sample.
    """

    def __init__(self, n_clusters=2, regularization=1.0, random_state=None):
        self.n_clusters = n_clusters
        self.regularization = regularization
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 4:
            X = X.reshape(X.shape[0], -1)
        if X.ndim != 2:
            raise ConfigurationError(
                f"expected (n_samples, n_features) data or an image stack; got shape {X.shape}"
            )
        seed = 0 if self.random_state is None else int(self.random_state)
        problem = RidgeProblem(features=[X.T], regularization=self.regularization)
        self.representation_matrix_ = ridge_closed_form(problem)
        self.affinity_ = build_affinity(self.representation_matrix_)
        self.labels_ = spectral_cluster(self.affinity_, self.n_clusters, seed)
        return self


class ResidualSubspaceClustering(BaseEstimator, ClusterMixin):
    """Residual encoder-decoder subspace clustering.

    ``fit`` expects an image stack shaped (n_samples, channels, height,
    width) scaled to [0, 1]. Training is full batch: the learned
    self-expressive matrix is n_samples x n_samples, so the model clusters
    exactly the samples it was fitted on.
    """

    def __init__(
        self,
        n_clusters=2,
        kernel_sizes=(5, 3, 3, 3, 3, 5),
        channels=(10, 20, 30, 30, 20, 10),
        stride=2,
        epochs_pretrain=500,
        epochs_finetune=500,
        learning_rate=1e-3,
        regularization=1.0,
        zero_diag=True,
        skip_mode="full",
        random_state=None,
    ):
        self.n_clusters = n_clusters
        self.kernel_sizes = kernel_sizes
        self.channels = channels
        self.stride = stride
        self.epochs_pretrain = epochs_pretrain
        self.epochs_finetune = epochs_finetune
        self.learning_rate = learning_rate
        self.regularization = regularization
        self.zero_diag = zero_diag
        self.skip_mode = skip_mode
        self.random_state = random_state

    def _architecture(self, input_channels):
        return Architecture(
            kernel_sizes=tuple(self.kernel_sizes),
            channels=tuple(self.channels),
            input_channels=input_channels,
            stride=self.stride,
        )

    def _train_config(self):
        return TrainConfig(
            epochs_pretrain=self.epochs_pretrain,
            epochs_finetune=self.epochs_finetune,
            learning_rate=self.learning_rate,
            regularization=self.regularization,
            seed=0 if self.random_state is None else int(self.random_state),
            zero_diag=self.zero_diag,
            skip_mode=self.skip_mode,
        )

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 4:
            raise ConfigurationError(
                f"expected an image stack shaped (n, channels, height, width); got {X.shape}"
            )
        config = self._train_config()
        arch = self._architecture(input_channels=X.shape[1])
        params, self.pretrain_history_ = pretrain(X, arch, config)
        params, self.finetune_history_ = finetune(X, params, arch, config)
        self.architecture_ = arch
        self.model_params_ = params
        self.representation_matrix_ = params.coefficients.data.copy()
        self.affinity_ = build_affinity(self.representation_matrix_)
        self.labels_ = spectral_cluster(self.affinity_, self.n_clusters, config.seed)
        return self
