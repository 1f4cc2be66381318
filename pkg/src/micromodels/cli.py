"""Command-line driver.

Every command reads one JSON config and writes artifacts into the run
directory. Exit codes: 0 ok, 1 component error, 2 config/validation error,
3 missing output of an earlier stage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import collection as coll
from .aggregation import AggregatorSpec, MicromodelFeaturizer, quantize_features
from .core import Instance, Utterance, instance_to_dict, load_corpus, load_instances, load_lexicon, save_corpus
from .ebm import ExplainableBoostingClassifier
from .embedding import make_provider
from .evaluation import CurveConfig, learning_curve, macro_f1, roc_auc, stratified_split
from .exceptions import MicromodelError
from .models import MicromodelRegistry, MicromodelSpec
from .pipeline import EBM_DEFAULTS, classify, explain, load_run, run_training, save_run, top_features_report

log = logging.getLogger("micromodels")

EXIT_OK, EXIT_COMPONENT, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class MissingStage(Exception):
    pass


@dataclass
class PipelineConfig:
    base_dir: Path
    seed: int = 0
    run_dir: Path = Path("run")
    provider: dict = field(default_factory=lambda: {"kind": "fallback"})
    lexicons: dict = field(default_factory=dict)
    micromodels: list = field(default_factory=list)
    aggregators: tuple = ()
    ebm: dict = field(default_factory=dict)
    positive_label: Optional[str] = None
    threshold: float = 0.5
    data: dict = field(default_factory=dict)
    curve: Optional[CurveConfig] = None
    collection: dict = field(default_factory=dict)
    threads: Optional[int] = None

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _require_path(cfg, rel, what):
    p = cfg.path(rel)
    if not p.exists():
        raise ConfigError(f"{what}: {p} does not exist")
    return p


def load_config(path, run_dir=None, seed=None, threads=None) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    # A bare collection config is accepted as-is.
    if "background" in doc and "collection" not in doc:
        doc = {"collection": doc}
    cfg = PipelineConfig(base_dir=path.parent.resolve())
    cfg.seed = int(seed if seed is not None else doc.get("seed", 0))
    cfg.run_dir = cfg.path(run_dir if run_dir is not None else doc.get("run_dir", "run"))
    cfg.threads = threads if threads is not None else (os.cpu_count() or 1)
    cfg.provider = dict(doc.get("provider", {"kind": "fallback"}))
    try:
        cfg.micromodels = [MicromodelSpec.from_dict(m) for m in doc.get("micromodels", [])]
        names = [m.name for m in cfg.micromodels]
        if len(set(names)) != len(names):
            raise ConfigError("micromodel names must be unique")
        cfg.aggregators = tuple(
            AggregatorSpec.from_dict(a) for a in doc.get("aggregators", [{"kind": "ratio"}, {"kind": "window"}])
        )
        if not cfg.aggregators:
            raise ConfigError("at least one aggregator is required")
        cfg.ebm = {**EBM_DEFAULTS, **doc.get("ebm", {})}
        task = doc.get("task", {})
        cfg.positive_label = task.get("positive_label")
        cfg.threshold = float(task.get("threshold", 0.5))
        curve = doc.get("curve", {})
        cfg.curve = CurveConfig(
            fractions=tuple(curve.get("fractions", CurveConfig().fractions)),
            runs=int(curve.get("runs", 5)),
            seed=cfg.seed,
        )
    except (KeyError, TypeError, ValueError, MicromodelError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc

    for name, rel in doc.get("lexicons", {}).items():
        cfg.lexicons[name] = _require_path(cfg, rel, f"lexicon {name!r}")
    for spec in cfg.micromodels:
        for key in ("positives", "negatives", "examples"):
            if key in spec.params:
                _require_path(cfg, spec.params[key], f"micromodel {spec.name!r} {key}")
        if spec.kind == "lexicon-logic" and spec.params.get("lexicon") not in cfg.lexicons:
            raise ConfigError(f"micromodel {spec.name!r}: unknown lexicon {spec.params.get('lexicon')!r}")
    cfg.data = dict(doc.get("data", {}))
    for key in ("train", "test", "instances"):
        if key in cfg.data:
            _require_path(cfg, cfg.data[key], f"data.{key}")
    cfg.collection = dict(doc.get("collection", {}))
    c = cfg.collection
    if c:
        if "background" not in c:
            raise ConfigError("collection.background is required")
        _require_path(cfg, c["background"], "collection.background")
        if "seed_corpus" in c:
            _require_path(cfg, c["seed_corpus"], "collection.seed_corpus")
        elif "seed_query" not in c:
            raise ConfigError("collection needs seed_corpus or seed_query")
        if c.get("mode", "auto") not in ("auto", "interactive"):
            raise ConfigError("collection.mode must be 'auto' or 'interactive'")
    return cfg


def _lexicons(cfg):
    try:
        return {name: load_lexicon(p) for name, p in cfg.lexicons.items()}
    except (ValueError, MicromodelError) as exc:
        raise ConfigError(str(exc)) from exc


def _registry_dir(cfg):
    return cfg.run_dir / "micromodels"


def _load_registry(cfg):
    d = _registry_dir(cfg)
    if not (d / "registry.json").exists():
        raise MissingStage(f"{d / 'registry.json'} (run 'build' first)")
    return MicromodelRegistry.load(d, make_provider(cfg.provider))


def _registry_bytes(cfg):
    d = _registry_dir(cfg)
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.glob("*.json"))}


def _split_data(cfg):
    """``(train, test)`` instance lists; ``test`` may be empty."""
    d = cfg.data
    try:
        if "train" in d:
            train = load_instances(cfg.path(d["train"]))
            test = load_instances(cfg.path(d["test"])) if "test" in d else []
            return train, test
        if "instances" in d:
            insts = load_instances(cfg.path(d["instances"]))
            tr, te = stratified_split([i.label for i in insts], 0.2, cfg.seed)
            return [insts[i] for i in tr], [insts[i] for i in te]
    except (ValueError, MicromodelError) as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError("config needs data.train (and data.test) or data.instances")


def _positive(cfg, labels):
    if cfg.positive_label is not None:
        return cfg.positive_label
    return sorted(set(labels))[-1]


def cmd_collect(cfg, interactive=False):
    c = cfg.collection
    if not c:
        raise ConfigError("config has no collection section")
    try:
        background = load_corpus(cfg.path(c["background"]))
        seed_corpus = load_corpus(cfg.path(c["seed_corpus"])) if "seed_corpus" in c else None
    except (ValueError, MicromodelError) as exc:
        raise ConfigError(str(exc)) from exc
    config = coll.CollectionConfig(
        background=background,
        seed_corpus=seed_corpus,
        seed_query=c.get("seed_query"),
        threshold=float(c.get("threshold", 0.85)),
        iterations=int(c.get("iterations", 3)),
        mode="interactive" if interactive else c.get("mode", "auto"),
        q=int(c.get("q", 10)),
        negation_query=c.get("negation_query"),
        lexicons=_lexicons(cfg),
    )
    provider = make_provider(cfg.provider)
    outlier = make_provider(c["outlier_provider"]) if "outlier_provider" in c else None
    state = coll.run_iterations(config, provider, outlier)
    out = cfg.run_dir / "collection"
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(state.example_corpus(), out / "corpus.jsonl")
    coll.write_audit(state.audit, out / "audit.jsonl")
    print(f"collect: {len(state.examples)} examples ({len(state.examples) - len(state.seed)} accepted) "
          f"after {state.iteration} iteration(s) -> {out / 'corpus.jsonl'}")


def cmd_build(cfg):
    if not cfg.micromodels:
        raise ConfigError("config defines no micromodels")
    registry = MicromodelRegistry.build(
        cfg.micromodels, make_provider(cfg.provider), _lexicons(cfg), cfg.base_dir
    )
    registry.save(_registry_dir(cfg))
    print(f"build: {len(registry)} micromodels, fingerprint {registry.fingerprint[:12]}")


def _trained(cfg):
    registry = _load_registry(cfg)
    if not (cfg.run_dir / "model.json").exists():
        raise MissingStage(f"{cfg.run_dir / 'model.json'} (run 'train' first)")
    return registry


def cmd_train(cfg):
    registry = _load_registry(cfg)
    before = _registry_bytes(cfg)
    train, _ = _split_data(cfg)
    run = run_training(train, registry, cfg.aggregators, cfg.ebm, cfg.seed,
                       _positive(cfg, [i.label for i in train]), cfg.threshold, cfg.threads)
    save_run(run, cfg.run_dir)
    if _registry_bytes(cfg) != before:
        raise MicromodelError("micromodel files changed during training")
    print(f"train: {len(train)} instances x {len(run.feature_names)} features -> {cfg.run_dir / 'model.json'}")


def _classified_path(cfg):
    return cfg.run_dir / "classified.jsonl"


def _read_jsonl(path):
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_classify(cfg, input_path):
    registry = _trained(cfg)
    try:
        instances = load_instances(input_path)
    except (OSError, ValueError, MicromodelError) as exc:
        raise ConfigError(str(exc)) from exc
    run = load_run(cfg.run_dir, registry, n_jobs=cfg.threads)
    rows = []
    for inst in instances:
        label, prob, _ = classify(run, inst)
        rows.append((inst.id, label, prob))
    with open(cfg.run_dir / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "label", "probability"])
        for iid, label, prob in rows:
            w.writerow([iid, label, repr(prob)])
    new_ids = {i.id for i in instances}
    kept = [r for r in _read_jsonl(_classified_path(cfg)) if r["id"] not in new_ids]
    with open(_classified_path(cfg), "w", encoding="utf-8", newline="\n") as fh:
        for rec in kept + [instance_to_dict(i) for i in instances]:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    prov = [r for r in _read_jsonl(cfg.run_dir / "provenance.jsonl") if r["instance"] not in new_ids]
    with open(cfg.run_dir / "provenance.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in prov:
            fh.write(json.dumps(rec) + "\n")
        for inst in instances:
            for mm in registry.names:
                hv = run.provenance.hit_vector(inst.id, mm)
                fh.write(json.dumps({"instance": inst.id, "micromodel": mm, "bits": hv.bitstring()}) + "\n")
    n_pos = sum(1 for _, lab, _ in rows if lab == run.classifier.model_.classes[1]) if run.classifier.is_binary else 0
    print(f"classify: {len(rows)} instances ({n_pos} positive) -> {cfg.run_dir / 'predictions.csv'}")


def cmd_explain(cfg, instance_id):
    registry = _trained(cfg)
    known = {}
    try:
        train, _ = _split_data(cfg)
        known.update({i.id: i for i in train})
    except ConfigError:
        pass
    for rec in _read_jsonl(_classified_path(cfg)):
        utts = tuple(Utterance(u["id"], u["text"], j) for j, u in enumerate(rec["utterances"]))
        known[rec["id"]] = Instance(rec["id"], utts, rec.get("label"))
    if instance_id not in known:
        raise MissingStage(f"instance {instance_id!r} was neither trained on nor classified in {cfg.run_dir}")
    inst = known[instance_id]
    run = load_run(cfg.run_dir, registry, [inst], n_jobs=cfg.threads)
    if instance_id not in run.features:
        classify(run, inst)
    exp = explain(run, instance_id)
    out = cfg.run_dir / "explanations"
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{instance_id}.json"
    target.write_text(json.dumps(exp.to_dict(), indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    top = max(exp.contributions.items(), key=lambda kv: abs(kv[1]))
    print(f"explain: {instance_id} -> {exp.label} (p={exp.probability:.3f}); "
          f"largest contribution {top[0]}={top[1]:+.3f}; {target}")


def cmd_eval(cfg):
    registry = _trained(cfg)
    train, test = _split_data(cfg)
    if not test:
        raise ConfigError("evaluation needs data.test or data.instances")
    run = load_run(cfg.run_dir, registry, n_jobs=cfg.threads)
    clf = run.classifier
    X = quantize_features(MicromodelFeaturizer(registry, run.aggregators, n_jobs=cfg.threads).fit().transform(test))
    y = [i.label for i in test]
    preds = list(clf.predict(X))
    metrics = {"n_test": len(test), "macro_f1": macro_f1(preds, y, list(clf.classes_))}
    if clf.is_binary:
        pos = clf.model_.classes[1]
        metrics["auc"] = roc_auc(clf.model_.predict_proba(X), y, pos)
        metrics["positive_label"] = pos
        metrics["top_features"] = [
            {"feature": f, "importance": v} for f, v in top_features_report(run, 10)
        ]
    (cfg.run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8")
    auc = f"auc={metrics['auc']:.4f} " if "auc" in metrics else ""
    print(f"eval: {auc}macro_f1={metrics['macro_f1']:.4f} on {len(test)} instances")


def cmd_curve(cfg):
    registry = _load_registry(cfg)
    train, test = _split_data(cfg)
    if not test:
        raise ConfigError("learning curve needs held-out test instances")
    featurizer = MicromodelFeaturizer(registry, cfg.aggregators, n_jobs=cfg.threads).fit()
    X_train = quantize_features(featurizer.transform(train))
    X_test = quantize_features(featurizer.transform(test))
    y_train = np.array([i.label for i in train])
    y_test = np.array([i.label for i in test])
    pos = _positive(cfg, y_train)

    def make():
        return ExplainableBoostingClassifier(random_state=cfg.seed, positive_class=pos, **cfg.ebm)

    result = learning_curve(X_train, y_train, X_test, y_test, make, cfg.curve, pos, cfg.threads)
    result.write_csv(cfg.run_dir / "curve.csv")
    summary = ", ".join(f"{f:g}:{a:.3f}" for f, a in result.summary().items())
    print(f"curve: mean AUC by fraction {summary}")


def build_parser():
    parser = argparse.ArgumentParser(prog="micromodels", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True)
        p.add_argument("--run-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        return p

    add("collect", "grow a micromodel example corpus").add_argument("--interactive", action="store_true")
    add("build", "build and freeze the micromodel registry")
    add("train", "featurize training data and fit the classifier")
    add("classify", "classify instances from a JSONL file").add_argument("--input", required=True)
    add("explain", "explain one trained-on or classified instance").add_argument("--instance", required=True)
    add("eval", "evaluate on the test split (metrics.json)")
    add("curve", "low-resource learning curve (curve.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.run_dir, args.seed, args.threads)
        cfg.run_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "collect":
            cmd_collect(cfg, args.interactive)
        elif args.command == "build":
            cmd_build(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "classify":
            cmd_classify(cfg, args.input)
        elif args.command == "explain":
            cmd_explain(cfg, args.instance)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "curve":
            cmd_curve(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingStage as exc:
        print(f"error: missing {exc}", file=sys.stderr)
        return EXIT_MISSING
    except MicromodelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPONENT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
