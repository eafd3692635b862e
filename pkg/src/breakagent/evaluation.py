"""Leakage-free evaluation: grouped splits, repeated trials, break voting,
k-fold plans, and the bootstrap-before-split antipattern kept for audits."""
from __future__ import annotations

import csv
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .breaks import ContractError
from .dataset import FeatureTable
from .learners import ClassifierSpec

PROTOCOLS = ("fragment_level", "break_level_voted", "row_level_unsafe")


class LeakageWarning(UserWarning):
    """Emitted whenever an operation makes downstream accuracy meaningless."""


class TrialError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    train_fragments: frozenset
    test_fragments: frozenset
    seed: int | None = None


@dataclass
class TrialResult:
    trial_index: int
    fragment_accuracy: float
    per_class_accuracy: dict
    confusion: dict  # (true, predicted) -> count
    n_test: int


@dataclass
class ExperimentReport:
    algorithm: str
    level: str
    protocol: str
    n_trials: int
    mean_accuracy: float
    std_accuracy: float
    per_class: dict
    master_seed: int
    test_fraction: float = 0.25
    trials: list = field(default_factory=list, repr=False)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Stable 63-bit seed for one trial, independent of execution order."""
    state = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(trial_index)]).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def group_split(fragment_ids, test_fraction: float = 0.25, rng=None) -> SplitPlan:
    """Partition fragments uniformly at random; round(test_fraction * n) go to test."""
    ids = sorted(set(map(str, fragment_ids)))
    n = len(ids)
    if n < 2:
        raise ContractError("group_split needs at least 2 fragments")
    if not 0.0 < test_fraction < 1.0:
        raise ContractError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(rng)
    n_test = min(max(int(math.floor(test_fraction * n + 0.5)), 1), n - 1)
    perm = rng.permutation(n)
    test = frozenset(ids[i] for i in perm[:n_test])
    return SplitPlan(frozenset(ids) - test, test)


def majority_vote(break_predictions: dict, rng=None) -> dict:
    """Modal predicted label per fragment; exact ties drawn uniformly from rng.

    Fragments are visited in sorted order so the draws are reproducible.
    """
    rng = np.random.default_rng(rng)
    out = {}
    for fid in sorted(break_predictions):
        labels = list(break_predictions[fid])
        if not labels:
            raise ContractError(f"fragment {fid} has no break predictions")
        counts = Counter(labels)
        top = max(counts.values())
        tied = sorted(lab for lab, c in counts.items() if c == top)
        out[fid] = tied[0] if len(tied) == 1 else tied[int(rng.integers(len(tied)))]
    return out


def kfold_plan(row_count: int, folds: int = 10, rng=None) -> list:
    if folds < 2:
        raise ContractError("folds must be >= 2")
    if row_count < folds:
        raise ContractError(f"cannot make {folds} folds from {row_count} rows")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(row_count)
    out = []
    for test in np.array_split(perm, folds):
        train = np.setdiff1d(perm, test)
        out.append((train, np.sort(test)))
    return out


def bootstrap_inflate(table: FeatureTable, factor: int, rng=None) -> FeatureTable:
    """Resample with replacement to ``factor`` times the size. AUDIT USE ONLY.

    Fragment tables resample rows; break tables resample whole fragments with
    their breaks. Every drawn copy gets a fresh group id, so a later grouped
    split scatters copies of the same fragment across train and test.
    """
    if factor < 1:
        raise ContractError("bootstrap factor must be >= 1")
    warnings.warn(
        f"bootstrap_inflate(x{factor}) before splitting puts copies of the same data in train and test; "
        "any accuracy measured downstream is invalid",
        LeakageWarning,
        stacklevel=2,
    )
    rng = np.random.default_rng(rng)
    if table.level == "fragment":
        draw = rng.integers(0, len(table), size=factor * len(table))
        out = table.subset(draw, group_ids=[f"{table.group_ids[d]}~{j}" for j, d in enumerate(draw)])
    else:
        groups = np.unique(table.group_ids)
        members = {g: np.flatnonzero(table.group_ids == g) for g in groups}
        draw = rng.integers(0, len(groups), size=factor * len(groups))
        index = np.concatenate([members[groups[d]] for d in draw])
        copy_no = np.concatenate([np.full(len(members[groups[d]]), j) for j, d in enumerate(draw)])
        out = table.subset(index, group_ids=[f"{table.group_ids[r]}~{j}" for r, j in zip(index, copy_no)])
    out.meta["bootstrap_factor"] = factor
    return out


# ---------------------------------------------------------------------------
# Trials

def _learner_seed(spec: ClassifierSpec, seed: int) -> int:
    return int(np.random.SeedSequence([spec.seed, seed]).generate_state(1)[0])


def fit_on_split(table: FeatureTable, plan: SplitPlan, spec: ClassifierSpec, seed: int = 0):
    """Fit ``spec`` on the training side of ``plan``; test rows are never passed in."""
    train = table.subset(table.rows_in_groups(plan.train_fragments))
    return spec.build(seed=_learner_seed(spec, seed)).fit(train.rows, train.labels)


def _score(true, pred, classes) -> tuple:
    true = np.asarray(true)
    pred = np.asarray(pred)
    per_class = {}
    for c in classes:
        mask = true == c
        per_class[c] = float((pred[mask] == c).mean()) if mask.any() else float("nan")
    confusion = Counter(zip(true.tolist(), pred.tolist()))
    return float((true == pred).mean()), per_class, dict(confusion)


def _check_protocol(table: FeatureTable, protocol: str) -> None:
    if protocol not in PROTOCOLS:
        raise ContractError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if protocol == "fragment_level" and table.level != "fragment":
        raise ContractError("protocol fragment_level needs a fragment-level table")
    if protocol == "break_level_voted" and table.level != "break":
        raise ContractError("protocol break_level_voted needs a break-level table")
    if protocol != "row_level_unsafe" and table.meta.get("row_level_groups"):
        raise ContractError("table has no fragment ids; only protocol row_level_unsafe applies")


def run_trial(table, spec, protocol, test_fraction, seed, trial_index, classes) -> TrialResult:
    rng = np.random.default_rng(seed)
    if protocol == "row_level_unsafe":
        groups = np.array([str(i) for i in range(len(table))])
        table = replace(table, group_ids=groups, meta=dict(table.meta))
    plan = group_split(np.unique(table.group_ids), test_fraction, rng)
    model = fit_on_split(table, plan, spec, seed)
    test = table.subset(table.rows_in_groups(plan.test_fragments))
    pred = model.predict(test.rows)
    if protocol == "break_level_voted":
        by_fragment: dict = {}
        truth = {}
        for g, p, t in zip(test.group_ids, pred, test.labels):
            by_fragment.setdefault(g, []).append(p)
            if truth.setdefault(g, t) != t:
                raise ContractError(f"fragment {g} has breaks with different labels")
        voted = majority_vote(by_fragment, rng)
        ids = sorted(voted)
        true, pred = [truth[g] for g in ids], [voted[g] for g in ids]
    else:
        true = test.labels
    acc, per_class, confusion = _score(true, pred, classes)
    return TrialResult(trial_index, acc, per_class, confusion, len(true))


def _run_trial_guarded(table, spec, protocol, test_fraction, master_seed, i, classes):
    seed = trial_seed(master_seed, i)
    with threadpool_limits(1):
        try:
            return run_trial(table, spec, protocol, test_fraction, seed, i, classes)
        except Exception as exc:
            raise TrialError(f"trial {i} (seed {seed}) failed: {exc}") from exc


def summarize(trials, classes) -> tuple:
    accs = np.array([t.fragment_accuracy for t in trials])
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    per_class = {}
    for c in classes:
        vals = np.array([t.per_class_accuracy.get(c, np.nan) for t in trials], dtype=float)
        per_class[c] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
    return float(accs.mean()), std, per_class


def run_experiment(
    table: FeatureTable,
    spec: ClassifierSpec,
    protocol: str = "fragment_level",
    n_trials: int = 300,
    test_fraction: float = 0.25,
    master_seed: int = 0,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Repeat split/fit/score ``n_trials`` times and report fragment accuracy.

    ``break_level_voted`` classifies breaks and lets each test fragment's
    breaks vote. ``row_level_unsafe`` treats each row as its own group; it
    exists for datasets without fragment ids and is always labelled as such.
    """
    _check_protocol(table, protocol)
    if n_trials < 1:
        raise ContractError("n_trials must be >= 1")
    classes = [str(c) for c in table.classes]
    args = (table, spec, protocol, test_fraction, master_seed)
    if n_jobs == 1:
        trials = [_run_trial_guarded(*args, i, classes) for i in range(n_trials)]
    else:
        trials = Parallel(n_jobs=n_jobs)(delayed(_run_trial_guarded)(*args, i, classes) for i in range(n_trials))
    trials.sort(key=lambda t: t.trial_index)
    mean, std, per_class = summarize(trials, classes)
    level = "row" if protocol == "row_level_unsafe" else "fragment"
    return ExperimentReport(spec.label, level, protocol, n_trials, mean, std, per_class, master_seed, test_fraction, trials)


def run_cv_experiment(
    table: FeatureTable,
    spec: ClassifierSpec,
    folds: int = 10,
    n_repeats: int = 300,
    master_seed: int = 0,
    bootstrap_factor: int | None = None,
) -> ExperimentReport:
    """Repeated k-fold over rows, for external tables without fragment ids.

    Each repeat scores every row once. With ``bootstrap_factor`` the table is
    inflated before folding, reproducing the invalid protocol for comparison.
    """
    classes = [str(c) for c in table.classes]
    trials = []
    for r in range(n_repeats):
        seed = trial_seed(master_seed, r)
        rng = np.random.default_rng(seed)
        data = table
        if bootstrap_factor:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LeakageWarning)
                data = bootstrap_inflate(table, bootstrap_factor, rng)
        pred = np.empty(len(data), dtype=object)
        with threadpool_limits(1):
            for train, test in kfold_plan(len(data), folds, rng):
                model = spec.build(seed=_learner_seed(spec, seed)).fit(data.rows[train], data.labels[train])
                pred[test] = model.predict(data.rows[test])
        acc, per_class, confusion = _score(data.labels, pred.astype(str), classes)
        trials.append(TrialResult(r, acc, per_class, confusion, len(data)))
    mean, std, per_class = summarize(trials, classes)
    protocol = "kfold_rows_bootstrapped" if bootstrap_factor else "kfold_rows"
    return ExperimentReport(spec.label, "row", protocol, n_repeats, mean, std, per_class, master_seed, 1.0 / folds, trials)


def write_report_csv(reports, path) -> None:
    classes = sorted({c for r in reports for c in r.per_class})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "level", "protocol", "n_trials", "mean_accuracy", "std_accuracy",
                    *(f"acc_class_{c}" for c in classes), "master_seed"])
        for r in reports:
            w.writerow([r.algorithm, r.level, r.protocol, r.n_trials, repr(r.mean_accuracy), repr(r.std_accuracy),
                        *(repr(r.per_class.get(c, float("nan"))) for c in classes), r.master_seed])
