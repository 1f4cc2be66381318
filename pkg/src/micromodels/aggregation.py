"""Aggregators: reduce a micromodel's per-utterance outputs to one feature value.

Also home of :class:`MicromodelFeaturizer`, the transformer that runs a frozen
registry over instances and emits the interpretable feature matrix.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import Instance
from .exceptions import ConfigurationError, ValidationError
from .models import HitVector, MicromodelRegistry

_SUFFIX = {"ratio": "", "window": "w", "maxpool": "m"}


def aggregate_ratio(bits: Sequence[int]) -> float:
    """Fraction of utterances that are hits."""
    if len(bits) == 0:
        raise ValidationError("empty bit vector")
    return sum(1 for b in bits if b) / len(bits)


def window_groups(bits: Sequence[int], max_gap: int) -> list[list[int]]:
    """Split hit positions into maximal groups whose consecutive hits are
    separated by at most ``max_gap`` zeros."""
    groups: list[list[int]] = []
    prev = None
    for j, b in enumerate(bits):
        if not b:
            continue
        if prev is None or j - prev - 1 > max_gap:
            groups.append([])
        groups[-1].append(j)
        prev = j
    return groups


def aggregate_window(bits: Sequence[int], max_gap: int = 5, min_hits: int = 3) -> float:
    """Number of hit windows holding at least ``min_hits`` hits, divided by k.

    A window is a maximal run of hits in which consecutive hits are at most
    ``max_gap`` zeros apart. Unlike the ratio, this depends on utterance order.
    """
    if len(bits) == 0:
        raise ValidationError("empty bit vector")
    count = sum(1 for g in window_groups(bits, max_gap) if len(g) >= min_hits)
    return min(1.0, count / len(bits))


def aggregate_maxpool(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise ValidationError("empty score vector")
    arr = np.asarray(scores, dtype=float)
    if np.any(~np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError("maxpool scores must lie in [0, 1]")
    return float(arr.max())


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "ratio"
    max_gap: int = 5
    min_hits: int = 3

    def __post_init__(self):
        if self.kind not in _SUFFIX:
            raise ConfigurationError(f"unknown aggregator kind {self.kind!r}")
        if self.max_gap < 0 or self.min_hits < 1:
            raise ConfigurationError("window aggregator needs max_gap >= 0 and min_hits >= 1")

    @property
    def suffix(self) -> str:
        return _SUFFIX[self.kind]

    def apply(self, hv: HitVector) -> float:
        if self.kind == "ratio":
            return aggregate_ratio(hv.bits)
        if self.kind == "window":
            return aggregate_window(hv.bits, self.max_gap, self.min_hits)
        return aggregate_maxpool(hv.scores if hv.scores is not None else hv.bits)

    @classmethod
    def from_dict(cls, doc):
        return cls(
            kind=doc.get("kind", "ratio"),
            max_gap=doc.get("max_gap", 5),
            min_hits=doc.get("min_hits", 3),
        )

    def to_dict(self):
        if self.kind == "window":
            return {"kind": self.kind, "max_gap": self.max_gap, "min_hits": self.min_hits}
        return {"kind": self.kind}


DEFAULT_AGGREGATORS = (AggregatorSpec("ratio"), AggregatorSpec("window"))


@dataclass(frozen=True)
class FeatureVector:
    instance_id: str
    names: tuple[str, ...]
    values: tuple[float, ...]

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))

    def __getitem__(self, name):
        return self.values[self.names.index(name)]


def feature_names(registry: MicromodelRegistry, aggregators) -> list[str]:
    return [m.name + a.suffix for m in registry for a in aggregators]


def featurize(registry: MicromodelRegistry, aggregators, instance: Instance):
    """Run every micromodel on ``instance`` and aggregate.

    Returns ``(FeatureVector, list[HitVector])``; features are ordered
    micromodel-major, aggregator-minor.
    """
    if not aggregators:
        raise ConfigurationError("at least one aggregator is required")
    hits = [m.run(instance) for m in registry]
    names, values = [], []
    for hv in hits:
        for agg in aggregators:
            names.append(hv.micromodel + agg.suffix)
            values.append(agg.apply(hv))
    return FeatureVector(instance.id, tuple(names), tuple(values)), hits


class MicromodelFeaturizer(TransformerMixin, BaseEstimator):
    """Transform instances into the aggregated micromodel feature matrix.

    Parameters
    ----------
    registry : MicromodelRegistry
        Frozen micromodels. ``fit`` never touches them.
    aggregators : sequence of AggregatorSpec, default ratio + window
    n_jobs : int or None
        Worker threads for per-instance featurization. Output order never
        depends on scheduling.
    """

    def __init__(self, registry=None, aggregators=DEFAULT_AGGREGATORS, n_jobs=None):
        self.registry = registry
        self.aggregators = aggregators
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.registry is None:
            raise ConfigurationError("featurizer needs a registry")
        self.feature_names_out_ = np.array(feature_names(self.registry, self.aggregators), dtype=object)
        self.registry_fingerprint_ = self.registry.fingerprint
        return self

    def featurize_many(self, instances: Sequence[Instance]):
        """Featurize in input order; returns ``[(FeatureVector, hits), ...]``."""
        check_is_fitted(self, "feature_names_out_")

        def one(inst):
            return featurize(self.registry, self.aggregators, inst)

        if self.n_jobs is not None and self.n_jobs > 1 and len(instances) > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                return list(pool.map(one, instances))
        return [one(i) for i in instances]

    def transform(self, X):
        rows = self.featurize_many(list(X))
        if not rows:
            return np.zeros((0, len(self.feature_names_out_)))
        return np.array([fv.values for fv, _ in rows], dtype=float)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()


def format_feature(value: float) -> str:
    return format(value, ".9g")


def quantize_features(X):
    """Round to the 9 significant digits used by the CSV export.

    Training on quantized values makes the exported matrix exactly the matrix
    the classifier saw.
    """
    X = np.asarray(X, dtype=float)
    return np.vectorize(lambda v: float(format_feature(v)), otypes=[float])(X) if X.size else X.copy()


def write_feature_csv(path, instance_ids, labels, names, X) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "label", *names])
        for iid, lab, row in zip(instance_ids, labels, X):
            w.writerow([iid, "" if lab is None else lab, *(format_feature(v) for v in row)])


def read_feature_csv(path):
    """Inverse of :func:`write_feature_csv`: ``(ids, labels, names, X)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["instance_id", "label"]:
            raise ValidationError(f"{path}: unexpected header {header[:2]}")
        ids, labels, rows = [], [], []
        for rec in r:
            ids.append(rec[0])
            labels.append(rec[1] or None)
            rows.append([float(v) for v in rec[2:]])
    names = header[2:]
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return ids, labels, names, X
