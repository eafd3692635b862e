"""Random forest: bagged CART trees with hard majority voting."""
from __future__ import annotations

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .base import StandardizedClassifier, argmax_lowest


class RandomForestClassifier(StandardizedClassifier):
    """``n_trees`` Gini trees, each on a bootstrap of the training rows.

    Each split looks at sqrt(d) random features; trees grow until pure or
    ``min_samples_leaf``. Vote ties go to the lowest class index.
    """

    def __init__(self, n_trees: int = 100, min_samples_leaf: int = 1, max_features="sqrt", seed: int = 0):
        self.n_trees = n_trees
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.seed = seed

    def _fit(self, Z, y, rng):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        n = len(Z)
        tree_seeds = rng.integers(0, 2**31 - 1, size=self.n_trees)
        self.trees_ = []
        for seed in tree_seeds:
            boot = rng.integers(0, n, size=n)
            tree = DecisionTreeClassifier(
                criterion="gini",
                max_features=self.max_features,
                min_samples_leaf=self.min_samples_leaf,
                random_state=int(seed),
            )
            tree.fit(Z[boot], y[boot])
            self.trees_.append(tree)

    def _predict(self, Z):
        votes = np.zeros((len(Z), len(self.classes_)), dtype=np.int64)
        rows = np.arange(len(Z))
        for tree in self.trees_:
            # tree.classes_ holds the class indices seen in its bootstrap
            pred = tree.classes_[np.argmax(tree.predict_proba(Z), axis=1)].astype(np.int64)
            votes[rows, pred] += 1
        return argmax_lowest(votes)

    def _fitted_parameters(self):
        out = {}
        for i, tree in enumerate(self.trees_):
            t = tree.tree_
            out[f"tree{i}.feature"] = t.feature
            out[f"tree{i}.threshold"] = t.threshold
            out[f"tree{i}.value"] = t.value
        return out
