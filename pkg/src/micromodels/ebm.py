"""Explainable boosting machine: a binned additive logistic model.

Each feature gets a step function learned by cyclic gradient boosting on
quantile bins, averaged over bootstrap bags and centered on the training data.
The logit of a prediction is exactly ``intercept + sum(shape_i(x_i))``, which
is what makes global importances and local contributions exact.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import TrainingError, ValidationError

MODEL_VERSION = 1


@dataclass(frozen=True)
class ShapeFunction:
    """Step function: bin ``b`` covers ``[edges[b-1], edges[b])`` with open ends."""

    name: str
    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if len(values) != len(edges) + 1:
            raise ValidationError(f"{self.name}: need len(edges) + 1 bin values")
        if np.any(np.diff(edges) <= 0):
            raise ValidationError(f"{self.name}: edges must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"{self.name}: bin values must be finite")
        edges.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    @property
    def n_bins(self) -> int:
        return len(self.values)

    def bin_index(self, x):
        return np.searchsorted(self.edges, x, side="right")

    def __call__(self, x):
        return self.values[self.bin_index(x)]

    def segments(self):
        """``[(lo, hi, value), ...]`` with infinite outer bounds."""
        bounds = [-math.inf, *self.edges.tolist(), math.inf]
        return [(bounds[b], bounds[b + 1], float(v)) for b, v in enumerate(self.values)]


@dataclass(frozen=True)
class EbmModel:
    shapes: tuple[ShapeFunction, ...]
    intercept: float
    classes: tuple = (0, 1)
    meta: Mapping = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return [s.name for s in self.shapes]

    def shape(self, name) -> ShapeFunction:
        for s in self.shapes:
            if s.name == name:
                return s
        raise ValidationError(f"unknown feature {name!r}")

    def contributions(self, X) -> np.ndarray:
        """Per-feature additive terms, shape ``(n_samples, n_features)``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.shapes):
            raise ValidationError(
                f"expected {len(self.shapes)} features, got array of shape {X.shape}"
            )
        return np.column_stack([s(X[:, i]) for i, s in enumerate(self.shapes)]) if self.shapes else np.zeros((len(X), 0))

    def decision_function(self, X) -> np.ndarray:
        terms = self.contributions(X)
        # Left-to-right sum, identical to the order used for local explanations.
        out = np.full(len(terms), self.intercept)
        for i in range(terms.shape[1]):
            out = out + terms[:, i]
        return out

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "intercept": self.intercept,
            "features": [
                {"name": s.name, "edges": s.edges.tolist(), "values": s.values.tolist()}
                for s in self.shapes
            ],
            "meta": {**self.meta, "classes": [c.item() if hasattr(c, "item") else c for c in self.classes]},
        }

    @classmethod
    def from_dict(cls, doc) -> "EbmModel":
        if doc.get("version") != MODEL_VERSION:
            raise ValidationError(f"unsupported model version {doc.get('version')!r}")
        meta = dict(doc.get("meta", {}))
        classes = tuple(meta.pop("classes", (0, 1)))
        shapes = tuple(ShapeFunction(f["name"], f["edges"], f["values"]) for f in doc["features"])
        return cls(shapes, float(doc["intercept"]), classes, meta)


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _as_row(model: EbmModel, x) -> np.ndarray:
    if isinstance(x, Mapping) or hasattr(x, "as_dict"):
        values = x.as_dict() if hasattr(x, "as_dict") else x
        missing = [n for n in model.feature_names if n not in values]
        if missing:
            raise ValidationError(f"missing features: {missing}")
        return np.array([[float(values[n]) for n in model.feature_names]])
    row = np.asarray(x, dtype=float).reshape(1, -1)
    if row.shape[1] != len(model.shapes):
        raise ValidationError(f"expected {len(model.shapes)} features, got {row.shape[1]}")
    return row


def predict(model: EbmModel, x) -> float:
    """Probability of the positive class for one feature vector."""
    return float(model.predict_proba(_as_row(model, x))[0])


@dataclass
class Explanation:
    """Global importances plus, for one instance, its additive breakdown.

    ``intercept + sum(contributions.values()) == score == logit(probability)``.
    ``evidence`` maps micromodel name to ``[(utterance index, text), ...]``.
    """

    global_importance: dict = field(default_factory=dict)
    contributions: dict = field(default_factory=dict)
    intercept: float = 0.0
    score: float = 0.0
    probability: float = 0.5
    instance_id: Optional[str] = None
    label: Optional[str] = None
    evidence: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "instance": self.instance_id,
            "label": self.label,
            "probability": self.probability,
            "score": self.score,
            "intercept": self.intercept,
            "contributions": self.contributions,
            "global_importance": self.global_importance,
            "evidence": {
                mm: [{"index": j, "text": t} for j, t in items] for mm, items in self.evidence.items()
            },
        }


def local_explanation(model: EbmModel, x) -> Explanation:
    row = _as_row(model, x)
    terms = model.contributions(row)[0]
    score = float(model.decision_function(row)[0])
    return Explanation(
        contributions={n: float(v) for n, v in zip(model.feature_names, terms)},
        intercept=model.intercept,
        score=score,
        probability=float(expit(score)),
    )


def global_importance(model: EbmModel, X) -> dict:
    """Mean absolute shape value per feature over the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("global importance needs a non-empty reference matrix")
    terms = model.contributions(X)
    return {n: float(np.mean(np.abs(terms[:, i]))) for i, n in enumerate(model.feature_names)}


def export_shape(model: EbmModel, feature: str):
    return model.shape(feature).segments()


def _fmt_bound(v):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def write_shapes_csv(model: EbmModel, path, features: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "bin_lo", "bin_hi", "value"])
        for name in features or model.feature_names:
            for lo, hi, v in export_shape(model, name):
                w.writerow([name, _fmt_bound(lo), _fmt_bound(hi), repr(v)])


def read_shapes_csv(path) -> dict:
    """``{feature: [(lo, hi, value), ...]}`` from :func:`write_shapes_csv` output."""
    out: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            out.setdefault(rec["feature"], []).append(
                (float(rec["bin_lo"]), float(rec["bin_hi"]), float(rec["value"]))
            )
    return out


def quantile_edges(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Interior cut points at the ``max_bins``-quantiles of ``col``.

    Duplicate quantiles collapse, and cuts at or below the minimum are dropped
    so no bin is empty by construction; a constant column gets a single bin.
    """
    if max_bins < 2:
        return np.zeros(0)
    qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    edges = np.unique(qs)
    return edges[edges > col.min()]


def _log_loss(y, score):
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def _boost_bag(bins, n_bins, y, bag, seed, n_rounds, learning_rate):
    """One bootstrap bag. Returns (bin values per feature, intercept, loss per round)."""
    n, n_feat = bins.shape
    rng = np.random.default_rng(seed + bag)
    idx = rng.integers(0, n, size=n)
    xb, yb = bins[idx], y[idx]
    rate = min(max(yb.mean(), 1e-6), 1.0 - 1e-6)
    intercept = math.log(rate / (1.0 - rate))
    values = [np.zeros(nb) for nb in n_bins]
    counts = [np.bincount(xb[:, f], minlength=n_bins[f]) for f in range(n_feat)]
    score = np.full(n, intercept)
    losses = [_log_loss(yb, score)]
    for _ in range(n_rounds):
        for f in range(n_feat):
            resid = yb - expit(score)
            sums = np.bincount(xb[:, f], weights=resid, minlength=n_bins[f])
            step = np.zeros(n_bins[f])
            occupied = counts[f] > 0
            step[occupied] = learning_rate * sums[occupied] / counts[f][occupied]
            values[f] += step
            score += step[xb[:, f]]
        losses.append(_log_loss(yb, score))
    return values, intercept, losses


def train_ebm(X, y, feature_names=None, max_bins=32, n_bags=8, n_rounds=200,
              learning_rate=0.05, seed=0, classes=(0, 1), n_jobs=None):
    """Train a binary additive model on 0/1 targets.

    Returns ``(EbmModel, loss_history)`` where ``loss_history[bag][r]`` is the
    bag's training log-loss after ``r`` boosting rounds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError("X must be 2-D with one row per label")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite")
    if len(np.unique(y)) < 2:
        raise TrainingError("training labels contain a single class")
    n, n_feat = X.shape
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(n_feat)]
    if len(names) != n_feat:
        raise ValidationError("feature_names length does not match X")

    edges = [quantile_edges(X[:, f], max_bins) for f in range(n_feat)]
    n_bins = [len(e) + 1 for e in edges]
    bins = np.column_stack(
        [np.searchsorted(edges[f], X[:, f], side="right") for f in range(n_feat)]
    ) if n_feat else np.zeros((n, 0), dtype=int)

    def run(bag):
        return _boost_bag(bins, n_bins, y, bag, seed, n_rounds, learning_rate)

    if n_jobs is not None and n_jobs > 1 and n_bags > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, range(n_bags)))
    else:
        results = [run(b) for b in range(n_bags)]

    # Reduce in bag-index order so the result is scheduling-independent.
    values = [np.zeros(nb) for nb in n_bins]
    intercept = 0.0
    for bag_values, bag_intercept, _ in results:
        for f in range(n_feat):
            values[f] += bag_values[f]
        intercept += bag_intercept
    values = [v / n_bags for v in values]
    intercept /= n_bags

    for f in range(n_feat):
        weights = np.bincount(bins[:, f], minlength=n_bins[f]) / n
        mean = float(weights @ values[f])
        values[f] = values[f] - mean
        intercept += mean

    shapes = tuple(ShapeFunction(names[f], edges[f], values[f]) for f in range(n_feat))
    meta = {
        "max_bins": max_bins,
        "n_bags": n_bags,
        "n_rounds": n_rounds,
        "learning_rate": learning_rate,
        "seed": seed,
        "n_samples": n,
    }
    model = EbmModel(shapes, float(intercept), tuple(classes), meta)
    return model, [losses for _, _, losses in results]


class ExplainableBoostingClassifier(ClassifierMixin, BaseEstimator):
    """Additive boosted classifier with exact per-feature explanations.

    Binary targets train one additive model. With more than two classes one
    model per class is trained one-vs-rest and the prediction is the argmax of
    their probabilities.

    Parameters
    ----------
    max_bins : int, default=32
        Upper bound on quantile bins per feature.
    n_bags : int, default=8
        Bootstrap bags averaged into the final model.
    n_rounds : int, default=200
        Boosting rounds per bag; each round visits every feature once.
    learning_rate : float, default=0.05
    random_state : int, default=0
        Bag ``b`` draws its bootstrap from ``random_state + b``.
    positive_class : label or None
        Binary only: which label is positive. Defaults to the last sorted class.
    threshold : float, default=0.5
        Binary only: predict positive when probability is strictly greater.
    feature_names : sequence of str or None
    n_jobs : int or None
        Threads used to train bags.
    """

    def __init__(self, max_bins=32, n_bags=8, n_rounds=200, learning_rate=0.05,
                 random_state=0, positive_class=None, threshold=0.5,
                 feature_names=None, n_jobs=None):
        self.max_bins = max_bins
        self.n_bags = n_bags
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.positive_class = positive_class
        self.threshold = threshold
        self.feature_names = feature_names
        self.n_jobs = n_jobs

    def _train(self, X, target, classes):
        return train_ebm(
            X, target, self.feature_names_, self.max_bins, self.n_bags, self.n_rounds,
            self.learning_rate, self.random_state, classes, self.n_jobs,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=False)
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = (
            list(self.feature_names) if self.feature_names is not None
            else [f"x{i}" for i in range(X.shape[1])]
        )
        classes, counts = np.unique(y, return_counts=True)
        if len(classes) < 2:
            raise TrainingError("training labels contain a single class")
        if counts.min() < 2:
            raise TrainingError("every class needs at least two training instances")
        self.classes_ = classes
        if len(classes) == 2:
            pos = self.positive_class if self.positive_class is not None else classes[-1]
            if pos not in classes:
                raise TrainingError(f"positive class {pos!r} not among labels")
            neg = classes[0] if classes[1] == pos else classes[1]
            self.model_, self.loss_history_ = self._train(X, (y == pos).astype(float), (neg, pos))
            self.models_ = [self.model_]
        else:
            self.models_, self.loss_history_ = [], []
            for c in classes:
                m, hist = self._train(X, (y == c).astype(float), ("rest", c))
                self.models_.append(m)
                self.loss_history_.append(hist)
            self.model_ = None
        return self

    @property
    def is_binary(self):
        return self.model_ is not None

    def _check(self, X):
        check_is_fitted(self, "models_")
        return check_array(X, dtype=float)

    def decision_function(self, X):
        X = self._check(X)
        if self.is_binary:
            return self.model_.decision_function(X)
        return np.column_stack([m.decision_function(X) for m in self.models_])

    def predict_proba(self, X):
        X = self._check(X)
        if self.is_binary:
            p = self.model_.predict_proba(X)
            pos_col = list(self.classes_).index(self.model_.classes[1])
            out = np.empty((len(X), 2))
            out[:, pos_col] = p
            out[:, 1 - pos_col] = 1.0 - p
            return out
        per_class = np.column_stack([m.predict_proba(X) for m in self.models_])
        return per_class / per_class.sum(axis=1, keepdims=True)

    def positive_proba(self, X):
        check_is_fitted(self, "models_")
        if not self.is_binary:
            raise ValidationError("positive_proba is defined for binary models only")
        return self.model_.predict_proba(self._check(X))

    def predict(self, X):
        X = self._check(X)
        if self.is_binary:
            neg, pos = self.model_.classes
            p = self.model_.predict_proba(X)
            return np.where(p > self.threshold, pos, neg)
        per_class = np.column_stack([m.predict_proba(X) for m in self.models_])
        return self.classes_[np.argmax(per_class, axis=1)]

    def explain_global(self, X):
        check_is_fitted(self, "models_")
        if self.is_binary:
            return global_importance(self.model_, X)
        return {c: global_importance(m, X) for c, m in zip(self.classes_, self.models_)}

    def explain_local(self, x):
        check_is_fitted(self, "models_")
        if self.is_binary:
            return local_explanation(self.model_, x)
        return {c: local_explanation(m, x) for c, m in zip(self.classes_, self.models_)}

    def to_dict(self):
        check_is_fitted(self, "models_")
        if self.is_binary:
            return self.model_.to_dict()
        return {
            "version": MODEL_VERSION,
            "classes": [c.item() if hasattr(c, "item") else c for c in self.classes_],
            "models": [m.to_dict() for m in self.models_],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc, **params):
        est = cls(**params)
        if "models" in doc:
            est.models_ = [EbmModel.from_dict(d) for d in doc["models"]]
            est.model_ = None
            est.classes_ = np.array(doc["classes"])
        else:
            est.model_ = EbmModel.from_dict(doc)
            est.models_ = [est.model_]
            est.classes_ = np.array(sorted(est.model_.classes))
        first = est.models_[0]
        est.feature_names_ = first.feature_names
        est.n_features_in_ = len(first.shapes)
        return est
