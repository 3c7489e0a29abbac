"""scikit-learn estimator wrapper around the training pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .clustering import assign, kmeans
from .config import TrainConfig
from .encoder import embed
from .trainer import fit_arrays, split_training_data, _seeds

UNLABELED = -1


class RAPClusterer(ClusterMixin, TransformerMixin, BaseEstimator):
    """Prototype-guided representation learning followed by k-means.

    ``fit(X, y)`` takes partial labels: entries of ``y`` equal to ``-1``
    mark unlabeled rows, every other value is a known class. ``transform``
    returns unit-norm embeddings; ``predict`` assigns rows to the k-means
    centroids found on the training embeddings.

    Parameters mirror :class:`rapnid.config.TrainConfig`; ``n_clusters``
    is the total number of classes (known plus novel) and
    ``random_state`` seeds every random choice.
    """

    def __init__(self, n_clusters=8, *, tau=0.1, alpha=1.0, omega=2.0, momentum=0.9,
                 eps_dist=1e-6, use_apdl=True, use_mixup=True, epochs=50, batch_size=64,
                 learning_rate=5e-2, grad_clip=5.0, warmup_epochs=5, early_stop_patience=20,
                 val_fraction=0.1, embed_dim=32, kmeans_n_init=3, random_state=0):
        self.n_clusters = n_clusters
        self.tau = tau
        self.alpha = alpha
        self.omega = omega
        self.momentum = momentum
        self.eps_dist = eps_dist
        self.use_apdl = use_apdl
        self.use_mixup = use_mixup
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.warmup_epochs = warmup_epochs
        self.early_stop_patience = early_stop_patience
        self.val_fraction = val_fraction
        self.embed_dim = embed_dim
        self.kmeans_n_init = kmeans_n_init
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        params = self.get_params()
        seed = params.pop("random_state")
        k = params.pop("n_clusters")
        return TrainConfig(seed=0 if seed is None else int(seed), k=int(k), **params)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        config = self._config()
        if y is None:
            y = np.full(X.shape[0], UNLABELED)
        y = column_or_1d(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        labeled = y != UNLABELED
        self.classes_ = np.unique(y[labeled])
        if len(self.classes_) > self.n_clusters:
            raise ValueError(
                f"{len(self.classes_)} labeled classes exceed n_clusters={self.n_clusters}"
            )
        y_idx = np.searchsorted(self.classes_, y[labeled])
        data = split_training_data(X[labeled], y_idx, X[~labeled], len(self.classes_),
                                   config.val_fraction, _seeds(config.seed)["split"])
        self.model_ = fit_arrays(data, int(self.n_clusters), config,
                                 [str(c) for c in self.classes_])
        self.n_features_in_ = X.shape[1]
        Z = embed(self.model_.encoder, X)
        result = kmeans(Z, int(self.n_clusters), seed=config.seed, n_init=config.kmeans_n_init)
        self.cluster_centers_ = result.centroids
        self.labels_ = result.labels
        self.history_ = list(self.model_.logs)
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} expects {self.n_features_in_}"
            )
        return X

    def transform(self, X):
        X = self._check(X)
        return embed(self.model_.encoder, X)

    def predict(self, X):
        return assign(self.transform(X), self.cluster_centers_)

    def fit_predict(self, X, y=None):
        return self.fit(X, y).labels_
