"""Shared estimator plumbing: train-only z-scoring and input validation."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..breaks import ContractError

STD_FLOOR = 1e-12


class Standardizer(TransformerMixin, BaseEstimator):
    """Z-score features with statistics from the rows passed to ``fit`` only.

    Columns whose standard deviation is below ``STD_FLOOR`` map to 0.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.constant_ = std < STD_FLOOR
        self.scale_ = np.where(self.constant_, 1.0, std)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Z = (X - self.mean_) / self.scale_
        Z[:, self.constant_] = 0.0
        return Z


class StandardizedClassifier(ClassifierMixin, BaseEstimator):
    """Base for the learners: validates, z-scores on training rows, maps labels.

    Subclasses implement ``_fit(Z, y_idx, rng)`` and ``_predict(Z) -> class indices``
    on standardized features with integer class indices.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ContractError("training data must contain at least two classes")
        self.standardizer_ = Standardizer().fit(X)
        self.n_features_in_ = X.shape[1]
        rng = np.random.default_rng(self.seed)
        self._fit(self.standardizer_.transform(X), y_idx, rng)
        return self

    def predict(self, X):
        check_is_fitted(self, "standardizer_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"model was fitted on {self.n_features_in_} features, got {X.shape[1]}")
        return self.classes_[self._predict(self.standardizer_.transform(X))]

    def fitted_parameters(self) -> dict:
        """Every learned array, for leakage and determinism checks."""
        check_is_fitted(self, "standardizer_")
        params = {"standardizer.mean": self.standardizer_.mean_, "standardizer.scale": self.standardizer_.scale_}
        params.update(self._fitted_parameters())
        return params

    def _fitted_parameters(self) -> dict:
        return {}


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; exact ties go to the lowest class index."""
    return np.argmax(scores, axis=1)
