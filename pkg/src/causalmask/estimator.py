"""scikit-learn wrapper around the mask/classifier/adversary trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledBatch
from .objective import LossWeights
from .trainer import TrainConfig, features, fit, predict


class CausalMaskClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Binary classifier on masked embeddings.

    ``fit`` holds out ``validation_fraction`` of the rows for early stopping.
    ``transform`` returns the masked (causal) features ``M * X``;
    ``feature_mask_`` is the mean mask over the training rows.
    """

    def __init__(self, learning_rate=1e-2, batch_size=256, max_epochs=100, early_stop_patience=10,
                 alpha=0.1, beta=1.0, lambda1=1e-3, lambda2=1.0, drop_p=0.1, tau_start=5.0,
                 tau_min=0.5, validation_fraction=0.1, use_mask=True, adversary_on_copy=False,
                 random_state=0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.alpha = alpha
        self.beta = beta
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.drop_p = drop_p
        self.tau_start = tau_start
        self.tau_min = tau_min
        self.validation_fraction = validation_fraction
        self.use_mask = use_mask
        self.adversary_on_copy = adversary_on_copy
        self.random_state = random_state

    def _config(self):
        seed = self.random_state if self.random_state is not None else 0
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            seed=int(seed),
            tau_start=self.tau_start,
            tau_min=self.tau_min,
            loss_weights=LossWeights(self.alpha, self.beta, self.lambda1, self.lambda2, self.drop_p),
            validation_fraction=self.validation_fraction,
            use_mask=self.use_mask,
            adversary_on_copy=self.adversary_on_copy,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_.size}")
        cfg = self._config()
        y01 = (y == self.classes_[1]).astype(np.float64)
        data = LabeledBatch(X, y01)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 17])))
        train, val = data.split(cfg.validation_fraction, rng)
        if train.n < 4 or val.n < 4:
            raise ValueError("too few samples for a training/validation split")
        self.bundle_, self.history_ = fit(train, val, cfg)
        mask, _, _ = features(self.bundle_, X)
        self.feature_mask_ = mask.mean(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def _checked(self, X):
        check_is_fitted(self, "bundle_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._checked(X)
        p = predict(self.bundle_, X)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        X = self._checked(X)
        return predict(self.bundle_, X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores >= 0.5).astype(int)]

    def transform(self, X):
        X = self._checked(X)
        _, z_c, _ = features(self.bundle_, X)
        return z_c
