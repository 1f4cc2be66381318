"""Metrics and the low-resource learning-curve protocol."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.model_selection import train_test_split

from .exceptions import ConfigurationError, MetricError, MicromodelError

DEFAULT_FRACTIONS = (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0)


def roc_auc(scores, labels, pos_label=1) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals the fraction of (positive, negative) pairs where the positive scores
    higher, counting ties as one half. Computed from average ranks.
    """
    scores = np.asarray(scores, dtype=float)
    pos = np.asarray(labels) == pos_label
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_f1(predictions, labels, classes: Optional[Sequence] = None) -> float:
    """Unweighted mean of per-class F1; a class never predicted nor present scores 0."""
    predictions = list(predictions)
    labels = list(labels)
    if classes is None:
        classes = sorted(set(labels) | set(predictions))
    if len(classes) == 0:
        raise MetricError("class set is empty")
    total = 0.0
    for c in classes:
        tp = sum(1 for p, t in zip(predictions, labels) if p == c and t == c)
        fp = sum(1 for p, t in zip(predictions, labels) if p == c and t != c)
        fn = sum(1 for p, t in zip(predictions, labels) if p != c and t == c)
        denom = 2 * tp + fp + fn
        total += 2 * tp / denom if denom else 0.0
    return total / len(classes)


def stratified_split(labels, test_size=0.2, seed=0):
    """Seeded stratified train/test index split."""
    idx = np.arange(len(labels))
    train, test = train_test_split(idx, test_size=test_size, random_state=seed, stratify=list(labels))
    return np.sort(train), np.sort(test)


def stratified_subsample(labels, fraction, rng) -> Optional[np.ndarray]:
    """Indices of a class-stratified random subsample, or None when a class
    would receive no instance."""
    labels = np.asarray(labels)
    if fraction >= 1.0:
        return np.arange(len(labels))
    chosen = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = int(round(fraction * len(members)))
        if take < 1:
            return None
        chosen.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(chosen))


@dataclass(frozen=True)
class CurveConfig:
    fractions: tuple = DEFAULT_FRACTIONS
    runs: int = 5
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr or any(not 0.0 < f <= 1.0 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
            raise ConfigurationError("fractions must be strictly increasing values in (0, 1]")
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        object.__setattr__(self, "fractions", fr)


@dataclass
class CurveResult:
    """``rows`` holds ``(fraction, run, auc_or_None, note)`` in (fraction, run) order."""

    rows: list = field(default_factory=list)

    def aucs(self, fraction) -> list:
        return [a for f, _, a, _ in self.rows if f == fraction]

    def mean_auc(self, fraction) -> float:
        vals = [a for a in self.aucs(fraction) if a is not None]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def fractions(self):
        return list(dict.fromkeys(f for f, _, _, _ in self.rows))

    def summary(self) -> dict:
        return {f: self.mean_auc(f) for f in self.fractions}

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "run", "auc"])
            for f in self.fractions:
                for frac, run, auc, _ in self.rows:
                    if frac == f:
                        w.writerow([repr(f), run, "unavailable" if auc is None else repr(auc)])
                mean = self.mean_auc(f)
                w.writerow([repr(f), "mean", "unavailable" if math.isnan(mean) else repr(mean)])


def learning_curve(X_train, y_train, X_test, y_test, make_classifier: Callable,
                   config: CurveConfig = CurveConfig(), pos_label=1, n_jobs=None) -> CurveResult:
    """Test AUC of classifiers trained on growing stratified subsets.

    ``make_classifier()`` returns an unfitted estimator with ``fit`` and
    ``predict_proba``. Its own seed is fixed, so every run at fraction 1 is
    the same model. Runs whose subsample lacks a class, or whose training
    fails, are recorded with ``auc=None`` rather than dropped.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    y_train = np.asarray(y_train)
    y_test = np.asarray(y_test)
    seeds = np.random.SeedSequence(config.seed).spawn(len(config.fractions) * config.runs)

    def one(job):
        fi, run = job
        frac = config.fractions[fi]
        rng = np.random.default_rng(seeds[fi * config.runs + run])
        idx = stratified_subsample(y_train, frac, rng)
        if idx is None:
            return (frac, run, None, "a class has no instance at this fraction")
        try:
            clf = make_classifier().fit(X_train[idx], y_train[idx])
        except MicromodelError as exc:
            return (frac, run, None, str(exc))
        col = list(clf.classes_).index(pos_label)
        return (frac, run, roc_auc(clf.predict_proba(X_test)[:, col], y_test, pos_label), "")

    jobs = [(fi, r) for fi in range(len(config.fractions)) for r in range(config.runs)]
    if n_jobs is not None and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(j) for j in jobs]
    return CurveResult(rows)
