"""Support vector machines: a linear one trained by stochastic subgradient
descent, and an RBF one solved in the dual by libsvm's SMO."""
from __future__ import annotations

import numpy as np
from sklearn.svm import SVC

from .base import StandardizedClassifier, argmax_lowest


def _pegasos(Z, s, C, epochs, batch_size, rng):
    """Minibatch Pegasos on 0.5||w||^2 + C * sum hinge, bias folded in as a feature.

    Step size 1/(lambda t) with lambda = 1/(C n); returns the average of the
    iterates over the second half of training.
    """
    n = len(Z)
    X = np.hstack([Z, np.ones((n, 1))])
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)
    w = np.zeros(X.shape[1])
    avg = np.zeros_like(w)
    n_avg = 0
    steps_per_epoch = -(-n // batch_size)
    total = epochs * steps_per_epoch
    t = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for b in range(steps_per_epoch):
            t += 1
            idx = perm[b * batch_size:(b + 1) * batch_size]
            xb, sb = X[idx], s[idx]
            eta = 1.0 / (lam * t)
            viol = sb * (xb @ w) < 1.0
            w *= 1.0 - eta * lam
            if viol.any():
                w += (eta / len(idx)) * (sb[viol, None] * xb[viol]).sum(axis=0)
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
            if t > total // 2:
                n_avg += 1
                avg += (w - avg) / n_avg
    return avg[:-1], avg[-1]


class LinearSVMClassifier(StandardizedClassifier):
    """L2-regularised hinge loss, one-vs-rest for more than two classes."""

    def __init__(self, C: float = 1.0, epochs: int = 20, batch_size: int = 32, seed: int = 0):
        self.C = C
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _fit(self, Z, y, rng):
        if self.C <= 0:
            raise ValueError("C must be positive")
        k = len(self.classes_)
        targets = [1] if k == 2 else range(k)
        coefs, intercepts = [], []
        for c in targets:
            s = np.where(y == c, 1.0, -1.0)
            w, b = _pegasos(Z, s, self.C, self.epochs, self.batch_size, rng)
            coefs.append(w)
            intercepts.append(b)
        self.coef_ = np.array(coefs)
        self.intercept_ = np.array(intercepts)

    def _predict(self, Z):
        scores = Z @ self.coef_.T + self.intercept_
        if len(self.classes_) == 2:
            return (scores[:, 0] > 0).astype(np.int64)
        return argmax_lowest(scores)

    def _fitted_parameters(self):
        return {"coef": self.coef_, "intercept": self.intercept_}


class RBFSVMClassifier(StandardizedClassifier):
    """Gaussian-kernel SVM, gamma = 1 / (d * mean feature variance).

    Exact duplicate training rows are merged into one point whose box
    constraint is C times its multiplicity; the dual optimum and therefore
    the decision function are unchanged.
    """

    def __init__(self, C: float = 1.0, tol: float = 1e-3, seed: int = 0):
        self.C = C
        self.tol = tol
        self.seed = seed

    def _fit(self, Z, y, rng):
        if self.C <= 0:
            raise ValueError("C must be positive")
        mean_var = float(Z.var(axis=0).mean())
        self.gamma_ = 1.0 / (Z.shape[1] * mean_var) if mean_var > 0 else 1.0
        stacked = np.column_stack([Z, y])
        uniq, counts = np.unique(stacked, axis=0, return_counts=True)
        self.svc_ = SVC(C=self.C, kernel="rbf", gamma=self.gamma_, tol=self.tol, cache_size=500)
        self.svc_.fit(uniq[:, :-1], uniq[:, -1].astype(np.int64), sample_weight=counts.astype(np.float64))

    def _predict(self, Z):
        return self.svc_.predict(Z).astype(np.int64)

    def _fitted_parameters(self):
        return {
            "support_vectors": self.svc_.support_vectors_,
            "dual_coef": self.svc_.dual_coef_,
            "intercept": self.svc_.intercept_,
        }
