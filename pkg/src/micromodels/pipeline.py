"""End-to-end task runs: featurize with frozen micromodels, train the additive
classifier on the feature matrix alone, and explain decisions down to the
utterances that triggered each micromodel.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .aggregation import (
    DEFAULT_AGGREGATORS,
    AggregatorSpec,
    FeatureVector,
    MicromodelFeaturizer,
    quantize_features,
    read_feature_csv,
    write_feature_csv,
)
from .core import Instance
from .ebm import ExplainableBoostingClassifier, Explanation, global_importance, local_explanation
from .exceptions import IntegrityError, UnknownInstanceError, ValidationError
from .models import HitVector, MicromodelRegistry

EBM_DEFAULTS = {"max_bins": 32, "n_bags": 8, "n_rounds": 200, "learning_rate": 0.05}


class ProvenanceStore:
    """Hit vectors and utterance texts keyed by instance, safe for concurrent inserts."""

    def __init__(self):
        self._hits: dict[tuple[str, str], HitVector] = {}
        self._texts: dict[str, tuple[str, ...]] = {}
        self._order: list[str] = []
        self._lock = threading.Lock()

    def record(self, instance: Instance, hits: Sequence[HitVector]) -> None:
        with self._lock:
            if instance.id not in self._texts:
                self._order.append(instance.id)
            self._texts[instance.id] = tuple(instance.texts)
            for hv in hits:
                if len(hv.bits) != instance.k:
                    raise ValidationError(f"{hv.micromodel}: hit vector length != k")
                self._hits[(instance.id, hv.micromodel)] = hv

    def __contains__(self, instance_id):
        return instance_id in self._texts

    @property
    def instance_ids(self):
        return list(self._order)

    def hit_vector(self, instance_id, micromodel) -> HitVector:
        try:
            return self._hits[(instance_id, micromodel)]
        except KeyError:
            raise UnknownInstanceError(f"no provenance for ({instance_id!r}, {micromodel!r})") from None

    def evidence(self, instance_id, micromodel) -> list[tuple[int, str]]:
        """``(index, text)`` of every utterance the micromodel hit."""
        hv = self.hit_vector(instance_id, micromodel)
        texts = self._texts[instance_id]
        return [(j, texts[j]) for j in hv.hit_indices]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for (iid, mm), hv in self._hits.items():
                fh.write(json.dumps({"instance": iid, "micromodel": mm, "bits": hv.bitstring()}) + "\n")


@dataclass
class TaskRun:
    registry: MicromodelRegistry
    aggregators: tuple
    featurizer: MicromodelFeaturizer
    classifier: ExplainableBoostingClassifier
    instance_ids: list
    labels: list
    X: np.ndarray
    provenance: ProvenanceStore
    fingerprint: str
    features: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return list(self.featurizer.get_feature_names_out())

    @property
    def model(self):
        return self.classifier.model_

    def global_importance(self) -> dict:
        return self.classifier.explain_global(self.X)

    def freeze_audit(self) -> None:
        if self.registry.fingerprint != self.fingerprint:
            raise IntegrityError("micromodel registry changed during the task run")


def _ebm_params(ebm_params, seed, positive_label, names, n_jobs):
    params = {**EBM_DEFAULTS, **(ebm_params or {})}
    return ExplainableBoostingClassifier(
        random_state=seed, positive_class=positive_label, feature_names=names, n_jobs=n_jobs, **params
    )


def run_training(instances: Sequence[Instance], registry: MicromodelRegistry,
                 aggregators=DEFAULT_AGGREGATORS, ebm_params=None, seed=0,
                 positive_label=None, threshold=0.5, n_jobs=None) -> TaskRun:
    """Featurize labeled instances and train the task classifier.

    The classifier sees only the (9-significant-digit) feature matrix, so
    retraining from the exported CSV reproduces the model exactly.
    """
    unlabeled = [i.id for i in instances if i.label is None]
    if unlabeled:
        raise ValidationError(f"training instances without labels: {unlabeled[:5]}")
    before = registry.fingerprint
    featurizer = MicromodelFeaturizer(registry, tuple(aggregators), n_jobs=n_jobs).fit()
    rows = featurizer.featurize_many(list(instances))
    names = list(featurizer.get_feature_names_out())
    X = quantize_features(np.array([fv.values for fv, _ in rows]).reshape(len(rows), len(names)))
    store = ProvenanceStore()
    features = {}
    for inst, (_, hits), row in zip(instances, rows, X):
        store.record(inst, hits)
        features[inst.id] = FeatureVector(inst.id, tuple(names), tuple(row.tolist()))
    y = [i.label for i in instances]
    clf = _ebm_params(ebm_params, seed, positive_label, names, n_jobs)
    clf.threshold = threshold
    clf.fit(X, y)
    if registry.fingerprint != before:
        raise IntegrityError("micromodel registry changed during training")
    return TaskRun(
        registry=registry,
        aggregators=tuple(aggregators),
        featurizer=featurizer,
        classifier=clf,
        instance_ids=[i.id for i in instances],
        labels=y,
        X=X,
        provenance=store,
        fingerprint=before,
        features=features,
    )


def featurize_for_run(run: TaskRun, instance: Instance) -> FeatureVector:
    (fv, hits), = run.featurizer.featurize_many([instance])
    run.provenance.record(instance, hits)
    values = tuple(quantize_features(np.array([fv.values]))[0].tolist())
    fv = FeatureVector(fv.instance_id, fv.names, values)
    run.features[instance.id] = fv
    return fv


def classify(run: TaskRun, instance: Instance):
    """Return ``(label, probability, FeatureVector)``.

    Binary: probability of the positive class, positive iff strictly above the
    run's threshold. Multiclass: the argmax class and its normalized probability.
    """
    fv = featurize_for_run(run, instance)
    row = np.array([fv.values])
    clf = run.classifier
    label = clf.predict(row)[0]
    if clf.is_binary:
        prob = float(clf.model_.predict_proba(row)[0])
    else:
        prob = float(clf.predict_proba(row)[0][list(clf.classes_).index(label)])
    return (label.item() if hasattr(label, "item") else label), prob, fv


def explain(run: TaskRun, instance_id: str) -> Explanation:
    """Global importances, local contributions and utterance evidence for an
    instance that was trained on or classified in this run."""
    if instance_id not in run.features or instance_id not in run.provenance:
        raise UnknownInstanceError(f"instance {instance_id!r} was not seen by this run")
    fv = run.features[instance_id]
    clf = run.classifier
    predicted = clf.predict(np.array([fv.values]))[0]
    if clf.is_binary:
        model = clf.model_
    else:
        model = clf.models_[list(clf.classes_).index(predicted)]
    exp = local_explanation(model, np.array(fv.values))
    exp.global_importance = global_importance(model, run.X)
    exp.instance_id = instance_id
    exp.label = predicted.item() if hasattr(predicted, "item") else predicted
    for mm in run.registry.names:
        ev = run.provenance.evidence(instance_id, mm)
        if ev:
            exp.evidence[mm] = ev
    return exp


def top_features_report(run: TaskRun, m: int = 10, importances: Optional[dict] = None):
    """``[(feature, importance), ...]`` by decreasing importance, ties by name."""
    imp = importances if importances is not None else run.global_importance()
    if imp and isinstance(next(iter(imp.values())), dict):
        raise ValidationError("pass per-class importances explicitly for multiclass runs")
    ranked = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[: max(m, 0)]


def save_run(run: TaskRun, run_dir) -> None:
    """Write features.csv, model.json, provenance.jsonl and run.json."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_feature_csv(run_dir / "features.csv", run.instance_ids, run.labels, run.feature_names, run.X)
    (run_dir / "model.json").write_text(run.classifier.to_json(), encoding="utf-8")
    run.provenance.write_jsonl(run_dir / "provenance.jsonl")
    meta = {
        "registry_fingerprint": run.fingerprint,
        "aggregators": [a.to_dict() for a in run.aggregators],
        "threshold": run.classifier.threshold,
        "positive_label": run.classifier.positive_class,
    }
    (run_dir / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def retrain_from_features(csv_path, ebm_params=None, seed=0, positive_label=None, n_jobs=None):
    """Train a classifier from an exported feature CSV alone."""
    _, labels, names, X = read_feature_csv(csv_path)
    clf = _ebm_params(ebm_params, seed, positive_label, names, n_jobs)
    return clf.fit(X, labels)


def load_run(run_dir, registry: MicromodelRegistry, instances: Sequence[Instance] = (), n_jobs=None) -> TaskRun:
    """Reload a saved run. ``instances`` re-attaches provenance for the
    instances listed in features.csv (featurization is pure)."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    if meta["registry_fingerprint"] != registry.fingerprint:
        raise IntegrityError("run was trained against a different micromodel registry")
    aggregators = tuple(AggregatorSpec.from_dict(a) for a in meta["aggregators"])
    featurizer = MicromodelFeaturizer(registry, aggregators, n_jobs=n_jobs).fit()
    doc = json.loads((run_dir / "model.json").read_text(encoding="utf-8"))
    clf = ExplainableBoostingClassifier.from_dict(
        doc, threshold=meta["threshold"], positive_class=meta["positive_label"]
    )
    ids, labels, names, X = read_feature_csv(run_dir / "features.csv")
    if names != list(featurizer.get_feature_names_out()):
        raise IntegrityError("feature names in features.csv do not match the registry")
    run = TaskRun(registry, aggregators, featurizer, clf, ids, labels, X, ProvenanceStore(),
                  meta["registry_fingerprint"])
    for iid, row in zip(ids, X):
        run.features[iid] = FeatureVector(iid, tuple(names), tuple(row.tolist()))
    known = set(ids)
    for inst in instances:
        if inst.id in known:
            (_, hits), = featurizer.featurize_many([inst])
            run.provenance.record(inst, hits)
    return run


class MicromodelClassifier(ClassifierMixin, BaseEstimator):
    """Estimator over raw instances: frozen micromodels, aggregators, EBM.

    ``fit(instances)`` uses each instance's label unless ``y`` is given.
    Micromodels are never refit; the registry fingerprint is audited.
    """

    def __init__(self, registry=None, aggregators=DEFAULT_AGGREGATORS, max_bins=32, n_bags=8,
                 n_rounds=200, learning_rate=0.05, random_state=0, positive_class=None,
                 threshold=0.5, n_jobs=None):
        self.registry = registry
        self.aggregators = aggregators
        self.max_bins = max_bins
        self.n_bags = n_bags
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.positive_class = positive_class
        self.threshold = threshold
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        instances = list(X)
        if y is not None:
            instances = [Instance(i.id, i.utterances, str(lab) if not isinstance(lab, str) else lab)
                         for i, lab in zip(instances, y)]
        ebm = {"max_bins": self.max_bins, "n_bags": self.n_bags,
               "n_rounds": self.n_rounds, "learning_rate": self.learning_rate}
        self.run_ = run_training(instances, self.registry, self.aggregators, ebm,
                                 self.random_state, self.positive_class, self.threshold, self.n_jobs)
        self.classes_ = self.run_.classifier.classes_
        return self

    def _features(self, X):
        check_is_fitted(self, "run_")
        return np.array([featurize_for_run(self.run_, inst).values for inst in X])

    def predict_proba(self, X):
        return self.run_.classifier.predict_proba(self._features(X))

    def predict(self, X):
        return self.run_.classifier.predict(self._features(X))

    def explain(self, instance_id):
        check_is_fitted(self, "run_")
        return explain(self.run_, instance_id)
