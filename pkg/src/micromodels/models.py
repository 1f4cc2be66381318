"""Frozen binary micromodels and the registry that orders them.

A micromodel maps each utterance of an instance to a bit (and, for some kinds,
a raw score). Once built, a micromodel is never modified: its serialized JSON
is hashed into the registry fingerprint so any mutation is detectable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Corpus, Instance, Lexicon, Utterance, load_corpus, tokenize
from .embedding import EmbeddingProvider
from .exceptions import ConfigurationError, IntegrityError, ValidationError

DEFAULT_SIMILARITY_THRESHOLD = 0.85
SERIAL_VERSION = 1

KINDS = ("keyword-logic", "lexicon-logic", "linear-svm", "similarity-query")


@dataclass(frozen=True)
class HitVector:
    micromodel: str
    instance_id: str
    bits: tuple[int, ...]
    scores: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.scores is not None and len(self.scores) != len(self.bits):
            raise ValidationError("scores and bits differ in length")

    @property
    def hit_indices(self) -> list[int]:
        return [j for j, b in enumerate(self.bits) if b]

    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)


class Micromodel:
    """Base class. Subclasses implement :meth:`score_utterance` and :meth:`payload`."""

    kind: str
    has_scores = False

    def __init__(self, name: str):
        self.name = name

    def score_utterance(self, text: str):
        """Return ``(bit, score_or_None)`` for one utterance."""
        raise NotImplementedError

    def score_texts(self, texts: Sequence[str]):
        return [self.score_utterance(t) for t in texts]

    def run(self, instance: Instance) -> HitVector:
        results = self.score_texts(instance.texts)
        bits = tuple(int(b) for b, _ in results)
        scores = tuple(float(s) for _, s in results) if self.has_scores else None
        return HitVector(self.name, instance.id, bits, scores)

    def payload(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "version": SERIAL_VERSION, **self.payload()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


def run_micromodel(model: Micromodel, instance: Instance) -> HitVector:
    return model.run(instance)


def _contains_ngram(tokens, gram):
    n = len(gram)
    return any(tuple(tokens[i : i + n]) == gram for i in range(len(tokens) - n + 1))


def run_keyword_logic(keywords, text: str) -> int:
    """1 if any keyword n-gram occurs as a contiguous token run in ``text``."""
    tokens = tokenize(text)
    return int(any(_contains_ngram(tokens, tuple(kw)) for kw in keywords))


def run_lexicon_logic(lexicon: Lexicon, category: str, text: str) -> int:
    if category not in lexicon.categories:
        raise ConfigurationError(f"lexicon {lexicon.name!r} has no category {category!r}")
    return int(any(lexicon.matches(category, tok) for tok in tokenize(text)))


class KeywordMicromodel(Micromodel):
    kind = "keyword-logic"

    def __init__(self, name, keywords):
        super().__init__(name)
        grams = []
        for kw in keywords:
            toks = tuple(tokenize(kw)) if isinstance(kw, str) else tuple(t.lower() for t in kw)
            if toks:
                grams.append(toks)
        if not grams:
            raise ConfigurationError(f"{name}: keyword list is empty")
        self.keywords = tuple(grams)

    def score_utterance(self, text):
        return run_keyword_logic(self.keywords, text), None

    def payload(self):
        return {"keywords": [list(k) for k in self.keywords]}


class LexiconMicromodel(Micromodel):
    kind = "lexicon-logic"

    def __init__(self, name, lexicon: Lexicon, category: str):
        super().__init__(name)
        if category not in lexicon.categories:
            raise ConfigurationError(
                f"{name}: lexicon {lexicon.name!r} has no category {category!r}"
            )
        self.lexicon_name = lexicon.name
        self.category = category
        self.entries = tuple(sorted(lexicon.categories[category]))
        self._lexicon = Lexicon(lexicon.name, {category: self.entries})

    def score_utterance(self, text):
        return run_lexicon_logic(self._lexicon, self.category, text), None

    def payload(self):
        return {"lexicon": self.lexicon_name, "category": self.category, "entries": list(self.entries)}


class SVMMicromodel(Micromodel):
    """Linear classifier over raw token counts; output bit is ``margin > 0``."""

    kind = "linear-svm"
    has_scores = True

    def __init__(self, name, vocabulary, weights, bias=0.0, hyperparams=None):
        super().__init__(name)
        self.vocabulary = tuple(vocabulary)
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}
        self.weights = np.asarray(weights, dtype=float)
        self.weights.flags.writeable = False
        self.bias = float(bias)
        self.hyperparams = dict(hyperparams or {})

    def vectorize(self, text):
        x = np.zeros(len(self.vocabulary))
        for tok in tokenize(text):
            i = self._index.get(tok)
            if i is not None:
                x[i] += 1.0
        return x

    def margin(self, text) -> float:
        return float(self.weights @ self.vectorize(text) + self.bias)

    def score_utterance(self, text):
        m = self.margin(text)
        return int(m > 0.0), m

    def payload(self):
        return {
            "vocabulary": list(self.vocabulary),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "hyperparams": self.hyperparams,
        }


def train_svm_micromodel(name, positives: Corpus, negatives: Corpus, lam=1e-2, epochs=50, seed=0):
    """Fit a linear SVM by Pegasos-style stochastic subgradient descent.

    Minimizes ``lam/2 ||w||^2 + mean(hinge)`` over raw token counts with step
    ``1/(lam*t)``. Samples are visited once per epoch in an order drawn from
    ``np.random.default_rng(seed)``. The bias is fixed at 0 so an utterance
    with no known tokens has margin exactly 0.
    """
    if len(positives) == 0 or len(negatives) == 0:
        raise ConfigurationError(f"{name}: SVM needs non-empty positive and negative corpora")
    texts = positives.texts + negatives.texts
    y = np.array([1.0] * len(positives) + [-1.0] * len(negatives))
    tokenized = [tokenize(t) for t in texts]
    vocab = sorted({tok for toks in tokenized for tok in toks})
    index = {tok: i for i, tok in enumerate(vocab)}
    X = np.zeros((len(texts), len(vocab)))
    for r, toks in enumerate(tokenized):
        for tok in toks:
            X[r, index[tok]] += 1.0

    rng = np.random.default_rng(seed)
    w = np.zeros(len(vocab))
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(texts)):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (w @ X[i]) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * X[i]
    params = {"lambda": lam, "epochs": epochs, "seed": seed}
    return SVMMicromodel(name, vocab, w, 0.0, params)


def _snap_unit(sims):
    # Self-similarity of unit vectors can land one ulp below 1.
    sims = np.clip(sims, -1.0, 1.0)
    sims[np.abs(sims - 1.0) <= 1e-12] = 1.0
    return sims


def cosine_matrix(a, b):
    """Cosine similarities between rows of two unit-normalized matrices."""
    return _snap_unit(np.asarray(a) @ np.asarray(b).T)


def run_similarity_query(example_embeddings, provider: EmbeddingProvider, threshold, text):
    """Return ``(bit, max_similarity)`` of ``text`` against cached example embeddings."""
    vec = provider.embed(text)
    smax = float(cosine_matrix(vec[None, :], example_embeddings).max())
    return int(smax >= threshold), smax


class SimilarityMicromodel(Micromodel):
    """Hit when an utterance is at least ``threshold``-cosine-similar to any example."""

    kind = "similarity-query"
    has_scores = True

    def __init__(self, name, examples: Corpus, provider: EmbeddingProvider,
                 threshold=DEFAULT_SIMILARITY_THRESHOLD, embeddings=None):
        super().__init__(name)
        if len(examples) == 0:
            raise ConfigurationError(f"{name}: example corpus is empty")
        if not 0.0 < threshold <= 1.0:
            raise ConfigurationError(f"{name}: threshold must lie in (0, 1], got {threshold}")
        self.examples = examples
        self.provider = provider
        self.threshold = float(threshold)
        if embeddings is None:
            embeddings = provider.embed_many(examples.texts)
        self.embeddings = np.asarray(embeddings, dtype=float)
        self.embeddings.flags.writeable = False

    def score_utterance(self, text):
        return run_similarity_query(self.embeddings, self.provider, self.threshold, text)

    def score_texts(self, texts):
        if not texts:
            return []
        sims = cosine_matrix(self.provider.embed_many(texts), self.embeddings).max(axis=1)
        return [(int(s >= self.threshold), float(s)) for s in sims]

    def payload(self):
        return {
            "examples": [{"id": u.id, "text": u.text} for u in self.examples],
            "embeddings": self.embeddings.tolist(),
            "threshold": self.threshold,
            "provider": self.provider.fingerprint,
        }


def micromodel_from_dict(doc: Mapping, provider: Optional[EmbeddingProvider] = None) -> Micromodel:
    if doc.get("version") != SERIAL_VERSION:
        raise ConfigurationError(f"unsupported micromodel version {doc.get('version')!r}")
    kind, name = doc["kind"], doc["name"]
    if kind == "keyword-logic":
        return KeywordMicromodel(name, doc["keywords"])
    if kind == "lexicon-logic":
        lex = Lexicon(doc["lexicon"], {doc["category"]: doc["entries"]})
        return LexiconMicromodel(name, lex, doc["category"])
    if kind == "linear-svm":
        return SVMMicromodel(name, doc["vocabulary"], doc["weights"], doc["bias"], doc.get("hyperparams"))
    if kind == "similarity-query":
        if provider is None:
            raise ConfigurationError(f"{name}: loading a similarity-query model needs a provider")
        if provider.fingerprint != doc["provider"]:
            raise ConfigurationError(
                f"{name}: built with provider {doc['provider']!r}, got {provider.fingerprint!r}"
            )
        utts = tuple(Utterance(e["id"], e["text"], i) for i, e in enumerate(doc["examples"]))
        return SimilarityMicromodel(
            name, Corpus(name, utts), provider, doc["threshold"], embeddings=doc["embeddings"]
        )
    raise ConfigurationError(f"unknown micromodel kind {kind!r}")


@dataclass(frozen=True)
class MicromodelSpec:
    """Declarative description of one micromodel, as found in a pipeline config."""

    name: str
    kind: str
    params: Mapping

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "similarity-query":
            thr = self.params.get("threshold", DEFAULT_SIMILARITY_THRESHOLD)
            if not 0.0 < thr <= 1.0:
                raise ConfigurationError(f"{self.name}: threshold must lie in (0, 1]")

    @classmethod
    def from_dict(cls, doc):
        return cls(name=doc["name"], kind=doc["kind"], params=dict(doc.get("params", {})))


def build_micromodel(spec: MicromodelSpec, provider=None, lexicons=None, base_dir=".") -> Micromodel:
    """Construct a micromodel from its spec. Relative paths resolve against ``base_dir``."""
    p = spec.params
    base = Path(base_dir)
    if spec.kind == "keyword-logic":
        return KeywordMicromodel(spec.name, p.get("keywords", []))
    if spec.kind == "lexicon-logic":
        lexicons = lexicons or {}
        lex_name = p["lexicon"]
        if lex_name not in lexicons:
            raise ConfigurationError(f"{spec.name}: unknown lexicon {lex_name!r}")
        return LexiconMicromodel(spec.name, lexicons[lex_name], p["category"])
    if spec.kind == "linear-svm":
        return train_svm_micromodel(
            spec.name,
            load_corpus(base / p["positives"]),
            load_corpus(base / p["negatives"]),
            lam=p.get("lambda", 1e-2),
            epochs=p.get("epochs", 50),
            seed=p.get("seed", 0),
        )
    if provider is None:
        raise ConfigurationError(f"{spec.name}: similarity-query needs an embedding provider")
    return SimilarityMicromodel(
        spec.name,
        load_corpus(base / p["examples"]),
        provider,
        p.get("threshold", DEFAULT_SIMILARITY_THRESHOLD),
    )


class MicromodelRegistry:
    """Ordered, frozen collection of micromodels.

    Order is fixed at construction and defines downstream feature order.
    """

    def __init__(self, models: Sequence[Micromodel]):
        names = [m.name for m in models]
        if len(set(names)) != len(names):
            raise ConfigurationError("micromodel names must be unique")
        self.models = tuple(models)

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.models]

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for m in self.models:
            h.update(m.to_json().encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for m in self.models:
            (directory / f"{m.name}.json").write_text(m.to_json(), encoding="utf-8")
        index = {"order": self.names, "fingerprint": self.fingerprint}
        (directory / "registry.json").write_text(json.dumps(index, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory, provider=None) -> "MicromodelRegistry":
        directory = Path(directory)
        index = json.loads((directory / "registry.json").read_text(encoding="utf-8"))
        models = [
            micromodel_from_dict(json.loads((directory / f"{n}.json").read_text(encoding="utf-8")), provider)
            for n in index["order"]
        ]
        reg = cls(models)
        if reg.fingerprint != index["fingerprint"]:
            raise IntegrityError(f"{directory}: registry fingerprint mismatch")
        return reg

    @classmethod
    def build(cls, specs, provider=None, lexicons=None, base_dir="."):
        return cls([build_micromodel(s, provider, lexicons, base_dir) for s in specs])
