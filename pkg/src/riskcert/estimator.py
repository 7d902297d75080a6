"""Scikit-learn style wrapper around the self-certified training pipeline.

``fit`` splits the data in half, learns a prior on the first half, trains
the posterior on the second, and stores a risk certificate that covers the
exact sampled network ``predict`` uses. Feature standardization is computed
on the prior half only, so the certificate's data never leaks into the
transform, and the same transform is applied at predict time.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import bounds
from .data import (
    CLASS_RATIO,
    Dataset,
    column_stats,
    partition_by_class,
    partition_per_example,
    stratified_split_indices,
)
from .model import MlpArch, forward_batch
from .training import CVAR, PriorGrid, TrainConfig, learn_prior, train_posterior
from .validation import as_float_matrix, check_same_length


class SelfCertifiedClassifier(BaseEstimator, ClassifierMixin):
    """MLP classifier whose ``certificate_`` bounds the subgroup risk.

    Parameters mirror the training configuration; ``bound`` picks the
    certificate family and with it the partition the risk ranges over
    (classes for the subgroup bounds, single examples otherwise).
    """

    def __init__(self, alpha=0.5, risk=CVAR, bound=bounds.SUBGROUPS_KL,
                 reference=CLASS_RATIO, hidden=(32,), epochs=10,
                 batch_size=256, learning_rate=1e-8, sigma2=1e-6, lam=1.0,
                 delta=0.05, l_max=4.0,
                 prior_learning_rates=(0.1, 0.01, 0.001), prior_epochs=20,
                 prior_fraction=0.5, seed=0):
        self.alpha = alpha
        self.risk = risk
        self.bound = bound
        self.reference = reference
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.sigma2 = sigma2
        self.lam = lam
        self.delta = delta
        self.l_max = l_max
        self.prior_learning_rates = prior_learning_rates
        self.prior_epochs = prior_epochs
        self.prior_fraction = prior_fraction
        self.seed = seed

    def _build_partition(self, data: Dataset):
        if self.bound in bounds.PER_EXAMPLE_KINDS:
            return partition_per_example(data)
        return partition_by_class(data, self.reference)

    def fit(self, X, y):
        X = as_float_matrix(X, "X")
        y = np.asarray(y)
        if y.ndim != 1:
            raise ValueError("y must be a 1-dimensional label vector")
        check_same_length(X, y, "X", "y")
        classes, dense = np.unique(y, return_inverse=True)
        if classes.size < 2:
            raise ValueError("need at least 2 classes to fit")
        self.classes_ = classes
        data = Dataset(X, dense.astype(int))
        prior_idx, post_idx = stratified_split_indices(
            data, float(self.prior_fraction), seed=[int(self.seed), 103])
        self.mean_, self.scale_ = column_stats(X[prior_idx])
        scaled = Dataset((X - self.mean_) / self.scale_, dense.astype(int))
        prior_data = scaled.subset(prior_idx)
        post_data = scaled.subset(post_idx)
        config = TrainConfig(
            epochs=int(self.epochs), batch_size=int(self.batch_size),
            learning_rate=float(self.learning_rate),
            sigma2=float(self.sigma2), alpha=float(self.alpha),
            risk=self.risk, bound=self.bound, lam=float(self.lam),
            delta=float(self.delta), l_max=float(self.l_max),
            seed=int(self.seed),
        )
        arch = MlpArch((data.n_features, *map(int, self.hidden),
                        data.n_classes))
        grid = PriorGrid(tuple(float(r) for r in self.prior_learning_rates),
                         int(self.prior_epochs))
        prior, n_priors = learn_prior(grid, config, arch, prior_data,
                                      post_data, self._build_partition)
        config = TrainConfig(
            epochs=config.epochs, batch_size=config.batch_size,
            learning_rate=config.learning_rate, sigma2=config.sigma2,
            alpha=config.alpha, risk=config.risk, bound=config.bound,
            lam=config.lam, delta=config.delta, l_max=config.l_max,
            n_priors=n_priors, seed=config.seed,
        )
        outcome = train_posterior(config, arch, prior, post_data,
                                  self._build_partition(post_data))
        self.arch_ = arch
        self.prior_ = prior
        self.n_priors_ = n_priors
        self.posterior_ = outcome.posterior
        self.certificate_ = outcome.certificate
        self.network_ = outcome.certified_sample
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError(
                "this SelfCertifiedClassifier instance is not fitted yet"
            )

    def predict_proba(self, X):
        self._check_fitted()
        X = as_float_matrix(X, "X")
        if X.shape[1] != self.mean_.size:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.mean_.size}"
            )
        scaled = (X - self.mean_) / self.scale_
        return forward_batch(self.arch_, self.network_, scaled)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]
