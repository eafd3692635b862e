"""The seven classifiers behind one ``fit``/``predict`` contract.

``ClassifierSpec`` names an algorithm plus hyperparameters and a seed, and
serialises to the JSON objects used in experiment configs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..breaks import ContractError
from .base import Standardizer, StandardizedClassifier
from .forest import RandomForestClassifier
from .neural_net import COMPACT_PROFILE, FULL_PROFILE, NeuralNetClassifier
from .simple import GaussianNBClassifier, KNNClassifier, LDAClassifier
from .svm import LinearSVMClassifier, RBFSVMClassifier

ALGORITHMS = {
    "random_forest": RandomForestClassifier,
    "linear_svm": LinearSVMClassifier,
    "rbf_svm": RBFSVMClassifier,
    "neural_net": NeuralNetClassifier,
    "lda": LDAClassifier,
    "gaussian_nb": GaussianNBClassifier,
    "knn": KNNClassifier,
}

# domain checks: name -> (predicate, description)
_DOMAINS = {
    "k": (lambda v: isinstance(v, int) and v >= 1, "integer >= 1"),
    "n_trees": (lambda v: isinstance(v, int) and v >= 1, "integer >= 1"),
    "min_samples_leaf": (lambda v: isinstance(v, int) and v >= 1, "integer >= 1"),
    "C": (lambda v: v > 0, "> 0"),
    "tol": (lambda v: v > 0, "> 0"),
    "hidden": (lambda v: len(v) >= 1 and all(int(h) == h and h >= 1 for h in v), "non-empty list of sizes >= 1"),
    "dropout": (lambda v: 0 <= v < 1, "in [0, 1)"),
    "epochs": (lambda v: isinstance(v, int) and v >= 1, "integer >= 1"),
    "batch_size": (lambda v: isinstance(v, int) and v >= 1, "integer >= 1"),
    "learning_rate": (lambda v: v > 0, "> 0"),
    "lr_decay": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "reg": (lambda v: v >= 0, ">= 0"),
    "var_smoothing": (lambda v: v >= 0, ">= 0"),
}


@dataclass(frozen=True)
class ClassifierSpec:
    algorithm: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}; expected one of {sorted(ALGORITHMS)}")
        params = dict(self.params)
        if self.algorithm == "neural_net" and params.pop("profile", None) == "compact":
            params = {**COMPACT_PROFILE, **params}
        valid = ALGORITHMS[self.algorithm]._get_param_names()
        for name, value in params.items():
            if name not in valid or name == "seed":
                raise ContractError(f"{self.algorithm}: unknown hyperparameter {name!r}")
            check = _DOMAINS.get(name)
            try:
                ok = check is None or check[0](value)
            except TypeError:
                ok = False
            if not ok:
                raise ContractError(f"{self.algorithm}.{name} must be {check[1]}, got {value!r}")
        if "hidden" in params:
            params["hidden"] = tuple(int(h) for h in params["hidden"])
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "seed", int(self.seed))

    def build(self, seed: int | None = None) -> StandardizedClassifier:
        return ALGORITHMS[self.algorithm](**self.params, seed=self.seed if seed is None else int(seed))

    @property
    def label(self) -> str:
        if self.algorithm == "knn" and "k" in self.params:
            return f"knn(k={self.params['k']})"
        return self.algorithm

    def to_dict(self) -> dict:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return {"algorithm": self.algorithm, "params": params, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ClassifierSpec":
        if not isinstance(obj, dict) or "algorithm" not in obj:
            raise ContractError("classifier spec must be an object with an 'algorithm' field")
        extra = set(obj) - {"algorithm", "params", "seed"}
        if extra:
            raise ContractError(f"unexpected classifier spec fields: {sorted(extra)}")
        return cls(obj["algorithm"], dict(obj.get("params") or {}), int(obj.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "ClassifierSpec":
        return cls.from_dict(json.loads(text))


def default_specs(seed: int = 0) -> list:
    """All seven learners at their documented defaults."""
    return [ClassifierSpec(name, {}, seed) for name in ALGORITHMS]


__all__ = [
    "ALGORITHMS",
    "COMPACT_PROFILE",
    "FULL_PROFILE",
    "ClassifierSpec",
    "GaussianNBClassifier",
    "KNNClassifier",
    "LDAClassifier",
    "LinearSVMClassifier",
    "NeuralNetClassifier",
    "RBFSVMClassifier",
    "RandomForestClassifier",
    "Standardizer",
    "StandardizedClassifier",
    "default_specs",
]
