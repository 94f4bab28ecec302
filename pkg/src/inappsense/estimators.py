"""scikit-learn compatible wrappers around the training and rejection code.

These compose with ``Pipeline``, ``clone`` and ``get_params``; the
network itself is the numpy implementation in :mod:`inappsense.dnn`.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .dnn import DEFAULT_THRESHOLD, ModelConfig, predict_proba, train
from .openset import classify_batch
from .validation import check_features, check_labels, check_threshold

UNKNOWN = "unknown"


class ActivityMLPClassifier(ClassifierMixin, BaseEstimator):
    """Tanh MLP with softmax output trained by Adam on standardized features.

    Standardization is part of the fitted model (fitted on the training
    split only), so raw 48-feature rows go straight in.

    Parameters
    ----------
    hidden_dims : tuple of int, default=(1024, 512, 256, 128)
    dropout_rate : float, default=0.3
    learning_rate : float, default=1e-3
    batch_size : int, default=2048
    epochs : int, default=100
    adam_beta1, adam_beta2, adam_epsilon : float
        Adam moment decay rates and denominator epsilon.
    random_state : int, default=0
        Seeds the validation split, initialization, shuffling and dropout.

    Attributes
    ----------
    artifact_ : ModelArtifact
    report_ : TrainReport
    classes_ : ndarray of ActivityLabel
    """

    def __init__(
        self,
        hidden_dims=(1024, 512, 256, 128),
        dropout_rate=0.3,
        learning_rate=1e-3,
        batch_size=2048,
        epochs=100,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_epsilon=1e-8,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_epsilon = adam_epsilon
        self.random_state = random_state

    def _config(self, n_features: int) -> ModelConfig:
        return ModelConfig(
            input_dim=n_features,
            hidden_dims=tuple(self.hidden_dims),
            dropout_rate=self.dropout_rate,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_epsilon=self.adam_epsilon,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X = check_features(X, n_features=None)
        labels = check_labels(y, len(X))
        self.artifact_, self.report_ = train(X, labels, self._config(X.shape[1]))
        self.classes_ = np.array(self.artifact_.label_map, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "artifact_")
        return predict_proba(self.artifact_, check_features(X, self.n_features_in_))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def score(self, X, y, sample_weight=None):
        # labels may be strings or ActivityLabel; compare as labels
        pred = self.predict(X)
        truth = check_labels(y, len(pred))
        hits = np.array([p == t for p, t in zip(pred, truth)], dtype=float)
        return float(np.average(hits, weights=sample_weight))


class OpenSetActivityClassifier(ClassifierMixin, BaseEstimator):
    """Confidence-threshold rejection on top of a probabilistic classifier.

    ``predict`` returns the top class when its probability is at least
    ``threshold`` and the string ``"unknown"`` otherwise.

    Parameters
    ----------
    estimator : classifier with ``predict_proba``, default=ActivityMLPClassifier()
    threshold : float, default=0.97
    """

    def __init__(self, estimator=None, threshold=DEFAULT_THRESHOLD):
        self.estimator = estimator
        self.threshold = threshold

    def fit(self, X, y):
        check_threshold(self.threshold)
        base = self.estimator if self.estimator is not None else ActivityMLPClassifier()
        self.estimator_ = clone(base).fit(X, y)
        self.classes_ = self.estimator_.classes_
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict_proba(X)

    def confidence(self, X):
        return self.predict_proba(X).max(axis=1)

    def predict(self, X):
        preds = classify_batch(self.predict_proba(X), check_threshold(self.threshold), list(self.classes_))
        return np.array([p.label if p.is_known else UNKNOWN for p in preds], dtype=object)

    def reject(self, X):
        """Boolean mask of rows rejected as unknown."""
        return self.confidence(X) < check_threshold(self.threshold)
