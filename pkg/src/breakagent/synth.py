"""Synthetic datasets and the randomized leakage audit.

The audit trains learners on data that carries no signal at all, under
three protocols: a break-level (row) split, bootstrap-then-split, and a
proper fragment split. Only the last one should report chance accuracy.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .breaks import ContractError
from .dataset import FeatureTable
from .evaluation import LeakageWarning, bootstrap_inflate, run_trial, trial_seed
from .learners import COMPACT_PROFILE, ClassifierSpec

AUDIT_PROTOCOLS = ("break_level_split", "frag_split_bootstrapped", "frag_split_proper")


@dataclass(frozen=True)
class RandomDatasetConfig:
    n_fragments: int = 200
    breaks_per_fragment: int = 7
    n_fragment_features: int = 34
    n_break_features: int = 6
    seed: int = 0

    def __post_init__(self):
        for name in ("n_fragments", "breaks_per_fragment", "n_fragment_features", "n_break_features"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")


def generate_random_dataset(config: RandomDatasetConfig, rng=None) -> FeatureTable:
    """Break table of pure noise: fragment features repeated over the fragment's
    breaks, then per-break features; labels 0/1 drawn per fragment."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    nf, nb = config.n_fragments, config.breaks_per_fragment
    frag = rng.standard_normal((nf, config.n_fragment_features))
    brk = rng.standard_normal((nf * nb, config.n_break_features))
    labels = rng.integers(0, 2, size=nf)
    width = len(str(nf - 1))
    fids = [f"f{i:0{width}d}" for i in range(nf)]
    columns = [f"frag_{j}" for j in range(config.n_fragment_features)]
    columns += [f"break_{j}" for j in range(config.n_break_features)]
    return FeatureTable(
        columns,
        np.hstack([np.repeat(frag, nb, axis=0), brk]),
        np.repeat(labels, nb).astype(str),
        np.repeat(fids, nb),
        "break",
        row_ids=np.tile([f"b{j}" for j in range(nb)], nf),
        meta={"n_fragment_features": config.n_fragment_features},
    )


def fragment_view(table: FeatureTable, n_fragment_features: int) -> FeatureTable:
    """One row per fragment: its fragment features, then each break's own
    features concatenated in break order. Needs equal break counts."""
    groups, first = np.unique(table.group_ids, return_index=True)
    order = np.argsort(first, kind="stable")
    groups = groups[order]
    rows, labels = [], []
    n_breaks = None
    for g in groups:
        idx = np.flatnonzero(table.group_ids == g)
        if n_breaks is None:
            n_breaks = len(idx)
        elif len(idx) != n_breaks:
            raise ContractError("fragment_view needs the same number of breaks per fragment")
        block = table.rows[idx]
        rows.append(np.concatenate([block[0, :n_fragment_features], block[:, n_fragment_features:].ravel()]))
        labels.append(table.labels[idx[0]])
    break_cols = table.column_names[n_fragment_features:]
    columns = list(table.column_names[:n_fragment_features])
    columns += [f"{c}@{b}" for b in range(n_breaks) for c in break_cols]
    return FeatureTable(columns, np.array(rows), labels, groups, "fragment")


def generate_blob_dataset(n_per_class: int, dims: int, separation_sigmas: float, seed: int = 0) -> FeatureTable:
    """Two unit-variance spherical Gaussians whose means are separation_sigmas apart."""
    if separation_sigmas < 0:
        raise ContractError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    offset = np.zeros(dims)
    offset[0] = separation_sigmas / 2.0
    a = rng.standard_normal((n_per_class, dims)) - offset
    b = rng.standard_normal((n_per_class, dims)) + offset
    n = 2 * n_per_class
    return FeatureTable(
        [f"x{j}" for j in range(dims)],
        np.vstack([a, b]),
        ["A"] * n_per_class + ["B"] * n_per_class,
        [f"p{i}" for i in range(n)],
        "fragment",
    )


def audit_specs(seed: int = 0) -> list:
    """The six learners of the audit; nearest neighbour uses k=1 and the
    network the compact profile."""
    return [
        ClassifierSpec("lda", {}, seed),
        ClassifierSpec("random_forest", {}, seed),
        ClassifierSpec("linear_svm", {}, seed),
        ClassifierSpec("rbf_svm", {}, seed),
        ClassifierSpec("knn", {"k": 1}, seed),
        ClassifierSpec("neural_net", dict(COMPACT_PROFILE), seed),
    ]


@dataclass
class AuditCell:
    protocol: str
    algorithm: str
    mean_accuracy: float
    std_accuracy: float
    n_trials: int
    accuracies: list = field(default_factory=list, repr=False)


@dataclass
class AuditReport:
    cells: list
    seed: int
    n_trials: int

    def cell(self, protocol: str, algorithm: str) -> AuditCell:
        for c in self.cells:
            if c.protocol == protocol and c.algorithm == algorithm:
                return c
        raise KeyError((protocol, algorithm))

    @property
    def algorithms(self) -> list:
        return list(dict.fromkeys(c.algorithm for c in self.cells))


def _audit_trial(config, specs, i, seed, train_fraction, bootstrap_factor):
    """One trial: a fresh random dataset, then every (protocol, learner) pair."""
    tseed = trial_seed(seed, i)
    rng = np.random.default_rng(tseed)
    data_seed, *proto_seeds = rng.bit_generator.seed_seq.spawn(1 + len(AUDIT_PROTOCOLS))
    breaks = generate_random_dataset(config, np.random.default_rng(data_seed))
    test_fraction = 1.0 - train_fraction
    classes = ["0", "1"]
    out = {}
    with threadpool_limits(1), warnings.catch_warnings():
        warnings.simplefilter("ignore", LeakageWarning)
        for protocol, pseed in zip(AUDIT_PROTOCOLS, proto_seeds):
            prng = np.random.default_rng(pseed)
            split_seed = int(prng.integers(2**63))
            if protocol == "break_level_split":
                table, eval_protocol = breaks, "row_level_unsafe"
            elif protocol == "frag_split_bootstrapped":
                frags = fragment_view(breaks, config.n_fragment_features)
                table, eval_protocol = bootstrap_inflate(frags, bootstrap_factor, prng), "fragment_level"
            else:
                table, eval_protocol = breaks, "break_level_voted"
            for spec in specs:
                res = run_trial(table, spec, eval_protocol, test_fraction, split_seed, i, classes)
                out[(protocol, spec.label)] = res.fragment_accuracy
    return i, out


def run_leakage_audit(
    config: RandomDatasetConfig = RandomDatasetConfig(),
    n_trials: int = 100,
    specs=None,
    train_fraction: float = 0.75,
    bootstrap_factor: int = 100,
    n_jobs: int = 1,
) -> AuditReport:
    """Randomized-data experiment over the three protocols.

    break_level_split: rows split ignoring fragments, scored per row.
    frag_split_bootstrapped: one row per fragment, inflated x100, then a
    grouped split. frag_split_proper: grouped split of the break table,
    breaks vote per fragment.
    """
    if n_trials < 1:
        raise ContractError("n_trials must be >= 1")
    specs = audit_specs(config.seed) if specs is None else list(specs)
    args = (config, specs)
    if n_jobs == 1:
        results = [_audit_trial(*args, i, config.seed, train_fraction, bootstrap_factor) for i in range(n_trials)]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_audit_trial)(*args, i, config.seed, train_fraction, bootstrap_factor) for i in range(n_trials)
        )
    results.sort(key=lambda r: r[0])
    cells = []
    for protocol in AUDIT_PROTOCOLS:
        for spec in specs:
            accs = [r[1][(protocol, spec.label)] for r in results]
            std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            cells.append(AuditCell(protocol, spec.label, float(np.mean(accs)), std, n_trials, accs))
    return AuditReport(cells, config.seed, n_trials)


def write_audit_csv(report: AuditReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["protocol", "algorithm", "mean_accuracy", "std_accuracy", "n_trials", "seed"])
        for c in report.cells:
            w.writerow([c.protocol, c.algorithm, repr(c.mean_accuracy), repr(c.std_accuracy), c.n_trials, report.seed])


def format_audit_table(report: AuditReport) -> str:
    """Percent mean (std) per learner and protocol, one learner per line."""
    head = ("Algorithm", "Break-Level Split", "Frag-Level Split w/ Bootstrap", "Frag-Level Split")
    lines = [" | ".join(head)]
    for alg in report.algorithms:
        cells = [report.cell(p, alg) for p in AUDIT_PROTOCOLS]
        lines.append(" | ".join([alg] + [f"{100 * c.mean_accuracy:.1f} ({100 * c.std_accuracy:.1f})" for c in cells]))
    lines.append(f"{report.n_trials} trials, seed {report.seed}, standard deviation in parentheses")
    return "\n".join(lines) + "\n"
