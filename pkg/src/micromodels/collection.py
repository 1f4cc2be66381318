"""Iterative example-corpus collection for similarity-query micromodels.

One iteration retrieves background utterances similar to the current example
corpus, optionally drops those matching the seeding pattern (via a negated
lexical query), ranks the rest by distance from the example centroid so the
most novel come first, and accepts some of them. Every accept/reject is logged
so the final corpus can be replayed from the seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import Corpus, Lexicon, Utterance
from .embedding import EmbeddingProvider
from .exceptions import StateError, UnknownInstanceError
from .models import DEFAULT_SIMILARITY_THRESHOLD, cosine_matrix
from .query import eval_query, parse_query

log = logging.getLogger(__name__)


@dataclass
class Candidate:
    utterance: Utterance
    similarity: float
    nearest_id: str
    outlier_distance: Optional[float] = None
    outlier_rank: Optional[int] = None
    notes: tuple = ()

    @property
    def id(self):
        return self.utterance.id


class CollectionState:
    """Accepted examples, pending candidates and the audit log.

    ``examples`` and ``pool`` never share an utterance id.
    """

    def __init__(self, seed: Corpus):
        self.seed = seed
        self.examples: list[Utterance] = list(seed.utterances)
        self.pool: dict[str, Candidate] = {}
        self.rejected: set[str] = set()
        self.iteration = 0
        self.audit: list[dict] = []
        self._vectors: dict = {}

    @property
    def example_ids(self):
        return {u.id for u in self.examples}

    def example_corpus(self, id=None) -> Corpus:
        utts = tuple(Utterance(u.id, u.text, i) for i, u in enumerate(self.examples))
        return Corpus(id or self.seed.id, utts)

    def embed(self, provider: EmbeddingProvider, utterances: Sequence[Utterance]) -> np.ndarray:
        """Embeddings for ``utterances``, memoized per provider and text."""
        key = provider.fingerprint
        cache = self._vectors.setdefault(key, {})
        missing = list(dict.fromkeys(u.text for u in utterances if u.text not in cache))
        if missing:
            for text, vec in zip(missing, provider.embed_many(missing)):
                cache[text] = vec
        if not utterances:
            return np.zeros((0, provider.dim))
        return np.vstack([cache[u.text] for u in utterances])

    def add_candidates(self, candidates: Sequence[Candidate]) -> None:
        taken = self.example_ids
        for c in candidates:
            if c.id in taken:
                raise StateError(f"candidate {c.id!r} is already an accepted example")
            self.pool[c.id] = c


def seed_examples(query, background: Corpus, lexicons: Mapping[str, Lexicon] | None = None) -> Corpus:
    """Background utterances matching ``query``, in original order."""
    if isinstance(query, str):
        query = parse_query(query)
    hits = [u for u in background if eval_query(query, u.text, lexicons)]
    if not hits:
        log.warning("seed query %s matched no background utterances", query)
    return Corpus(f"{background.id}-seed", tuple(Utterance(u.id, u.text, i) for i, u in enumerate(hits)))


def retrieve_similar(state: CollectionState, background: Corpus, provider: EmbeddingProvider,
                     threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> list[Candidate]:
    """Unseen background utterances whose best cosine against the examples is
    at least ``threshold``, most similar first (ties by id)."""
    if not state.examples:
        raise StateError("example corpus is empty")
    excluded = state.example_ids | set(state.pool) | state.rejected
    fresh = [u for u in background if u.id not in excluded]
    if not fresh:
        return []
    sims = cosine_matrix(state.embed(provider, fresh), state.embed(provider, state.examples))
    best = sims.argmax(axis=1)
    out = []
    for r, u in enumerate(fresh):
        s = float(sims[r, best[r]])
        if s >= threshold:
            out.append(Candidate(u, s, state.examples[best[r]].id))
    out.sort(key=lambda c: (-c.similarity, c.id))
    return out


def negation_filter(candidates: Sequence[Candidate], query, lexicons=None) -> list[Candidate]:
    """Keep the candidates satisfying ``query``; order is preserved.

    Pass the negated seeding query, e.g. ``NOT (pronoun(first) AND ...)``.
    """
    if isinstance(query, str):
        query = parse_query(query)
    kept = []
    for c in candidates:
        if eval_query(query, c.utterance.text, lexicons):
            if "negation" not in c.notes:
                c.notes = (*c.notes, "negation")
            kept.append(c)
    return kept


def rank_outliers(state: CollectionState, candidates: Sequence[Candidate],
                  provider: EmbeddingProvider) -> list[Candidate]:
    """Order candidates by cosine distance from the example centroid, largest first."""
    if not state.examples:
        raise StateError("example corpus is empty")
    if not candidates:
        return []
    centroid = state.embed(provider, state.examples).mean(axis=0)
    norm = np.linalg.norm(centroid)
    if norm > 0:
        centroid = centroid / norm
    vecs = state.embed(provider, [c.utterance for c in candidates])
    dist = 1.0 - vecs @ centroid
    for c, d in zip(candidates, dist):
        c.outlier_distance = float(d)
    ranked = sorted(candidates, key=lambda c: (-c.outlier_distance, c.id))
    for rank, c in enumerate(ranked, start=1):
        c.outlier_rank = rank
    return ranked


def _log(state, cand, action):
    state.audit.append(
        {
            "iter": state.iteration,
            "utterance_id": cand.id,
            "action": action,
            "similarity": cand.similarity,
            "outlier_rank": cand.outlier_rank,
        }
    )


def accept(state: CollectionState, ids: Sequence[str]) -> CollectionState:
    """Move pooled candidates into the example corpus, in the given order."""
    unknown = [i for i in ids if i not in state.pool]
    if unknown:
        raise UnknownInstanceError(f"not in candidate pool: {unknown}")
    for i in ids:
        cand = state.pool.pop(i)
        state.examples.append(cand.utterance)
        _log(state, cand, "accept")
    return state


def reject(state: CollectionState, ids: Sequence[str]) -> CollectionState:
    unknown = [i for i in ids if i not in state.pool]
    if unknown:
        raise UnknownInstanceError(f"not in candidate pool: {unknown}")
    for i in ids:
        cand = state.pool.pop(i)
        state.rejected.add(i)
        _log(state, cand, "reject")
    return state


def accept_interactive(state: CollectionState, ranked: Sequence[Candidate],
                       ask: Optional[Callable[[str], str]] = None,
                       say: Optional[Callable[[str], None]] = None) -> bool:
    """Prompt y/n/quit for each candidate in rank order. Returns True on quit.

    ``ask`` and ``say`` default to :func:`input` and :func:`print`.
    """
    ask = ask or input
    say = say or print
    for cand in ranked:
        say(f"[{cand.outlier_rank}] sim={cand.similarity:.3f} {cand.id}: {cand.utterance.text}")
        while True:
            answer = ask("accept? [y/n/q] ").strip().lower()
            if answer in ("y", "yes"):
                accept(state, [cand.id])
                break
            if answer in ("n", "no"):
                reject(state, [cand.id])
                break
            if answer in ("q", "quit"):
                return True
    return False


@dataclass
class CollectionConfig:
    background: Corpus
    seed_corpus: Optional[Corpus] = None
    seed_query: Optional[str] = None
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    iterations: int = 3
    mode: str = "auto"
    q: int = 10
    negation_query: Optional[str] = None
    lexicons: Mapping[str, Lexicon] = field(default_factory=dict)


def initial_state(config: CollectionConfig) -> CollectionState:
    if config.seed_corpus is not None:
        return CollectionState(config.seed_corpus)
    if config.seed_query is None:
        raise StateError("collection needs a seed corpus or a seed query")
    return CollectionState(seed_examples(config.seed_query, config.background, config.lexicons))


def run_iterations(config: CollectionConfig, provider: EmbeddingProvider,
                   outlier_provider: Optional[EmbeddingProvider] = None,
                   state: Optional[CollectionState] = None,
                   ask: Optional[Callable[[str], str]] = None,
                   say: Optional[Callable[[str], None]] = None) -> CollectionState:
    """Run retrieve -> negation filter -> outlier rank -> accept loops.

    Candidates that are not accepted stay pooled and compete again in the
    next iteration. The loop stops early when nothing is left to accept or
    the user quits.
    """
    outlier_provider = outlier_provider or provider
    state = state or initial_state(config)
    negation = parse_query(config.negation_query) if config.negation_query else None
    for _ in range(config.iterations):
        if not state.examples:
            log.warning("example corpus is empty; stopping")
            break
        state.iteration += 1
        state.add_candidates(retrieve_similar(state, config.background, provider, config.threshold))
        pending = sorted(state.pool.values(), key=lambda c: (-c.similarity, c.id))
        if negation is not None:
            kept = negation_filter(pending, negation, config.lexicons)
            kept_ids = {c.id for c in kept}
            reject(state, [c.id for c in pending if c.id not in kept_ids])
            pending = kept
        if not pending:
            break
        ranked = rank_outliers(state, pending, outlier_provider)
        if config.mode == "interactive":
            if accept_interactive(state, ranked, ask, say):
                break
        else:
            if config.q <= 0:
                break
            accept(state, [c.id for c in ranked[: config.q]])
    return state


def replay_audit(seed: Corpus, background: Corpus, audit: Sequence[dict]) -> Corpus:
    """Rebuild the example corpus from the seed and the accept entries of ``audit``."""
    by_id = {u.id: u for u in background}
    utts = list(seed.utterances)
    for entry in audit:
        if entry["action"] == "accept":
            utts.append(by_id[entry["utterance_id"]])
    return Corpus(seed.id, tuple(Utterance(u.id, u.text, i) for i, u in enumerate(utts)))


def write_audit(audit: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in audit:
            fh.write(json.dumps(entry) + "\n")


def read_audit(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
