"""k-nearest neighbours, linear discriminant analysis, Gaussian naive Bayes."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .base import StandardizedClassifier, argmax_lowest


def _sq_distances(A: np.ndarray, B: np.ndarray, b_sq: np.ndarray) -> np.ndarray:
    d = (A * A).sum(axis=1)[:, None] + b_sq[None, :] - 2.0 * (A @ B.T)
    np.maximum(d, 0.0, out=d)
    return d


class KNNClassifier(StandardizedClassifier):
    """Majority vote of the k nearest training rows (Euclidean, z-scored).

    Vote ties go to whichever tied class owns the nearest neighbour.
    """

    def __init__(self, k: int = 25, seed: int = 0, chunk_size: int = 2048):
        self.k = k
        self.seed = seed
        self.chunk_size = chunk_size

    def _fit(self, Z, y, rng):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        self.train_ = Z
        self.train_sq_ = (Z * Z).sum(axis=1)
        self.train_y_ = y

    def _predict(self, Z):
        n_train = len(self.train_)
        k = min(self.k, n_train)
        n_classes = len(self.classes_)
        out = np.empty(len(Z), dtype=np.int64)
        for start in range(0, len(Z), self.chunk_size):
            block = Z[start:start + self.chunk_size]
            d = _sq_distances(block, self.train_, self.train_sq_)
            if k < n_train:
                idx = np.argpartition(d, k - 1, axis=1)[:, :k]
            else:
                idx = np.broadcast_to(np.arange(n_train), (len(block), n_train)).copy()
            # order neighbours by (distance, training index)
            dk = np.take_along_axis(d, idx, axis=1)
            order = np.lexsort((idx, dk), axis=1)
            idx = np.take_along_axis(idx, order, axis=1)
            labels = self.train_y_[idx]
            counts = np.zeros((len(block), n_classes), dtype=np.int64)
            np.add.at(counts, (np.repeat(np.arange(len(block)), k), labels.ravel()), 1)
            top = counts.max(axis=1, keepdims=True)
            tied = counts == top
            # first neighbour (nearest) whose class is among the tied leaders
            first = np.argmax(np.take_along_axis(tied, labels, axis=1), axis=1)
            out[start:start + len(block)] = labels[np.arange(len(block)), first]
        return out

    def _fitted_parameters(self):
        return {"train": self.train_, "train_y": self.train_y_}


class LDAClassifier(StandardizedClassifier):
    """Linear discriminant analysis with a ridge on the pooled covariance.

    The ridge is ``reg * trace(S) / d`` added to the diagonal.
    """

    def __init__(self, reg: float = 1e-6, seed: int = 0):
        self.reg = reg
        self.seed = seed

    def _fit(self, Z, y, rng):
        n, d = Z.shape
        k = len(self.classes_)
        means = np.array([Z[y == c].mean(axis=0) for c in range(k)])
        centered = Z - means[y]
        dof = n - k if n > k else n
        S = centered.T @ centered / dof
        ridge = self.reg * np.trace(S) / d
        S[np.diag_indices(d)] += max(ridge, 1e-12)
        factor = cho_factor(S)
        W = cho_solve(factor, means.T)  # d x k
        self.coef_ = W.T
        priors = np.bincount(y, minlength=k) / n
        self.intercept_ = -0.5 * np.einsum("kd,kd->k", means, self.coef_) + np.log(priors)
        self.means_ = means

    def decision_function(self, X):
        Z = self.standardizer_.transform(X)
        return Z @ self.coef_.T + self.intercept_

    def _predict(self, Z):
        return argmax_lowest(Z @ self.coef_.T + self.intercept_)

    def _fitted_parameters(self):
        return {"coef": self.coef_, "intercept": self.intercept_}


class GaussianNBClassifier(StandardizedClassifier):
    """Gaussian naive Bayes.

    Variances get ``var_smoothing * max(per-feature variance)`` added, never
    less than ``min_floor``, so constant features stay finite.
    """

    def __init__(self, var_smoothing: float = 1e-9, min_floor: float = 1e-12, seed: int = 0):
        self.var_smoothing = var_smoothing
        self.min_floor = min_floor
        self.seed = seed

    def _fit(self, Z, y, rng):
        k = len(self.classes_)
        floor = max(self.var_smoothing * float(Z.var(axis=0).max()), self.min_floor)
        self.theta_ = np.array([Z[y == c].mean(axis=0) for c in range(k)])
        self.var_ = np.array([Z[y == c].var(axis=0) for c in range(k)]) + floor
        self.class_log_prior_ = np.log(np.bincount(y, minlength=k) / len(y))
        self.floor_ = floor

    def joint_log_likelihood(self, Z):
        ll = -0.5 * np.log(2.0 * np.pi * self.var_).sum(axis=1)[None, :]
        ll = ll - 0.5 * (((Z[:, None, :] - self.theta_[None]) ** 2) / self.var_[None]).sum(axis=2)
        return ll + self.class_log_prior_

    def _predict(self, Z):
        return argmax_lowest(self.joint_log_likelihood(Z))

    def _fitted_parameters(self):
        return {"theta": self.theta_, "var": self.var_, "prior": self.class_log_prior_}
