"""Fully connected ReLU network with dropout, trained by Adadelta."""
from __future__ import annotations

import numpy as np

from .base import StandardizedClassifier, argmax_lowest

FULL_PROFILE = {"hidden": (100, 1000, 5000), "epochs": 100}
COMPACT_PROFILE = {"hidden": (64, 64), "epochs": 30}


class _Adadelta:
    def __init__(self, params, rho, eps):
        self.rho = rho
        self.eps = eps
        self.g2 = [np.zeros_like(p) for p in params]
        self.dx2 = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr):
        rho, eps = self.rho, self.eps
        for p, g, g2, dx2 in zip(params, grads, self.g2, self.dx2):
            g2 *= rho
            g2 += (1.0 - rho) * (g * g)
            # delta = sqrt(dx2 + eps) / sqrt(g2 + eps) * g, built in place
            delta = dx2 + eps
            np.sqrt(delta, out=delta)
            delta /= np.sqrt(g2 + eps)
            delta *= g
            dx2 *= rho
            dx2 += (1.0 - rho) * (delta * delta)
            delta *= lr
            p -= delta


class NeuralNetClassifier(StandardizedClassifier):
    """Softmax cross-entropy MLP.

    Dropout sits between consecutive hidden layers. The learning rate is
    multiplied by ``lr_decay`` after every epoch. Weights start Glorot-uniform,
    biases at zero.
    """

    def __init__(
        self,
        hidden=FULL_PROFILE["hidden"],
        dropout: float = 0.4,
        epochs: int = FULL_PROFILE["epochs"],
        batch_size: int = 32,
        learning_rate: float = 1.0,
        lr_decay: float = 0.9,
        rho: float = 0.95,
        eps: float = 1e-7,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.rho = rho
        self.eps = eps
        self.seed = seed

    def _fit(self, Z, y, rng):
        hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in hidden):
            raise ValueError("hidden layer sizes must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        sizes = (Z.shape[1], *hidden, len(self.classes_))
        self.weights_ = []
        self.biases_ = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights_.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases_.append(np.zeros(fan_out))
        params = [*self.weights_, *self.biases_]
        opt = _Adadelta(params, self.rho, self.eps)
        onehot = np.eye(len(self.classes_))[y]
        n = len(Z)
        lr = self.learning_rate
        keep = 1.0 - self.dropout
        n_layers = len(self.weights_)
        for _ in range(self.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = perm[start:start + self.batch_size]
                acts = [Z[idx]]
                masks = []
                h = acts[0]
                for layer in range(n_layers - 1):
                    h = np.maximum(h @ self.weights_[layer] + self.biases_[layer], 0.0)
                    if layer < n_layers - 2 and self.dropout > 0:
                        m = (rng.random(h.shape) < keep) / keep
                        h = h * m
                    else:
                        m = None
                    masks.append(m)
                    acts.append(h)
                logits = h @ self.weights_[-1] + self.biases_[-1]
                logits -= logits.max(axis=1, keepdims=True)
                p = np.exp(logits)
                p /= p.sum(axis=1, keepdims=True)
                delta = (p - onehot[idx]) / len(idx)
                gw = [None] * n_layers
                gb = [None] * n_layers
                for layer in range(n_layers - 1, -1, -1):
                    gw[layer] = acts[layer].T @ delta
                    gb[layer] = delta.sum(axis=0)
                    if layer == 0:
                        break
                    delta = delta @ self.weights_[layer].T
                    if masks[layer - 1] is not None:
                        delta = delta * masks[layer - 1]
                    delta = delta * (acts[layer] > 0)
                opt.step(params, [*gw, *gb], lr)
            lr *= self.lr_decay

    def _forward(self, Z):
        h = Z
        for W, b in zip(self.weights_[:-1], self.biases_[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return h @ self.weights_[-1] + self.biases_[-1]

    def _predict(self, Z):
        return argmax_lowest(self._forward(Z))

    def _fitted_parameters(self):
        out = {f"W{i}": w for i, w in enumerate(self.weights_)}
        out.update({f"b{i}": b for i, b in enumerate(self.biases_)})
        return out
