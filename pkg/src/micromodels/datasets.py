"""Synthetic fixtures for tests, demos and the acceptance suite.

Real mental-health corpora are access-restricted; these generators plant known
signals so that expected behavior can be derived from the construction.
Run ``python -m micromodels.datasets DIR`` to write a complete demo project.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core import Corpus, Instance, Utterance, save_corpus, save_instances
from .embedding import FallbackEmbedder
from .models import cosine_matrix


def additive_logistic(n=2000, low=-2.0, high=2.0, seed=0):
    """``y ~ Bernoulli(sigmoid(2*x0 - x1))`` with ``x ~ U(low, high)^2``.

    Returns ``(X, y, partials)`` where ``partials[i](x)`` is the generating
    term of feature ``i``.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, 2))
    y = (rng.random(n) < expit(2.0 * X[:, 0] - X[:, 1])).astype(float)
    return X, y, (lambda x: 2.0 * x, lambda x: -1.0 * x)


_FILLER_SUBJECTS = ["the bus", "my cousin", "the weather", "our neighbor", "this recipe", "the new phone",
                    "that movie", "the garden", "his bike", "the meeting", "the concert", "a stray dog",
                    "the library", "my laptop", "the train", "their band", "the market", "the river"]
_FILLER_VERBS = ["was", "seemed", "looked", "felt", "turned out", "sounded", "got"]
_FILLER_ADJS = ["late", "sunny", "loud", "delicious", "expensive", "crowded", "quiet", "green",
                "broken", "bright", "slow", "fun", "cheap", "huge", "tiny", "fresh", "wet", "fancy"]
_FILLER_TAILS = ["this morning", "again", "on tuesday", "at noon", "after lunch", "last weekend",
                 "downtown", "near the park", "as usual", "for once", "all afternoon", "in july"]


def filler_sentence(rng) -> str:
    return " ".join(
        [
            _FILLER_SUBJECTS[rng.integers(len(_FILLER_SUBJECTS))],
            _FILLER_VERBS[rng.integers(len(_FILLER_VERBS))],
            _FILLER_ADJS[rng.integers(len(_FILLER_ADJS))],
            _FILLER_TAILS[rng.integers(len(_FILLER_TAILS))],
        ]
    )


_CLUSTER_BASE = "no matter how hard i try i always end up feeling like a complete failure at everything"
_CLUSTER_SWAPS = [
    ("hard", ["much", "long", "often"]),
    ("complete", ["total", "massive", "utter"]),
    ("always", ["still", "just", "somehow"]),
]
_CLUSTER_TAILS = ["", " today", " lately", " again", " honestly"]


def _cluster_variants():
    out = []
    for tail in _CLUSTER_TAILS:
        out.append(_CLUSTER_BASE + tail)
        for word, subs in _CLUSTER_SWAPS:
            for s in subs:
                out.append(_CLUSTER_BASE.replace(f" {word} ", f" {s} ", 1) + tail)
    return out


def planted_paraphrase_corpus(cluster_size=30, n_distractors=500, n_seed=3, seed=0,
                              threshold=0.85, provider=None):
    """Background corpus holding one paraphrase cluster among filler distractors.

    The cluster is connected at ``threshold`` under ``provider`` (checked by
    brute force); no distractor reaches ``threshold`` against any cluster
    member. Returns ``(background, cluster_ids, seed_corpus)``; the seed is the
    first ``n_seed`` cluster members.
    """
    provider = provider or FallbackEmbedder()
    rng = np.random.default_rng(seed)
    variants = _cluster_variants()
    if cluster_size > len(variants):
        raise ValueError(f"at most {len(variants)} cluster members available")
    cluster = [variants[i] for i in sorted(rng.choice(len(variants), cluster_size, replace=False))]
    distractors = []
    seen = set(cluster)
    while len(distractors) < n_distractors:
        s = filler_sentence(rng)
        if s not in seen:
            seen.add(s)
            distractors.append(s)

    ce = provider.embed_many(cluster)
    if not _connected(cosine_matrix(ce, ce) >= threshold):
        raise AssertionError("planted cluster is not connected at the threshold")
    if (cosine_matrix(provider.embed_many(distractors), ce) >= threshold).any():
        raise AssertionError("a distractor is too close to the cluster")

    texts = [(f"c{i:03d}", t) for i, t in enumerate(cluster)] + [
        (f"d{i:03d}", t) for i, t in enumerate(distractors)
    ]
    order = rng.permutation(len(texts))
    utts = tuple(Utterance(texts[j][0], texts[j][1], i) for i, j in enumerate(order))
    background = Corpus("background", utts)
    cluster_ids = [f"c{i:03d}" for i in range(cluster_size)]
    seed_corpus = Corpus(
        "seed", tuple(Utterance(f"c{i:03d}", cluster[i], i) for i in range(n_seed))
    )
    return background, cluster_ids, seed_corpus


def _connected(adj) -> bool:
    n = len(adj)
    seen, stack = {0}, [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


SELF_BLAME_EXAMPLES = [
    "it is all my fault that everything went wrong",
    "i blame myself for everything that happened to us",
    "everything bad that happens is because of me",
    "i ruin everything i touch and it is my fault",
]
_SELF_BLAME_TAILS = ["", " again", " today", " honestly", " lately"]

SLEEP_PHRASES = ["i cannot sleep at all tonight", "insomnia kept me up until four",
                 "another night where i cannot sleep", "my insomnia is getting worse"]
AON_POSITIVE = ["i always mess up everything", "nothing ever works out for me",
                "i never do anything right", "everyone always leaves me",
                "i will never be good enough", "everything is always ruined"]
AON_NEGATIVE = ["the soup needs more salt", "we walked to the store", "the game starts at six",
                "she painted the fence blue", "i bought some apples", "the train was on time"]
PIZZA_PHRASES = ["we ordered pizza for dinner", "that pizza place downtown is great"]
SAD_PHRASES = ["the ending of that film made me cry", "it was a sad day for the team"]


def separable_task(n_instances=200, k=20, seed=0):
    """Instances whose label co-occurs with planted micromodel signals.

    Positive ("depression") instances contain a run of self-blame paraphrases,
    insomnia mentions and all-or-nothing statements; negatives ("control")
    contain at most one stray insomnia mention. Pizza and sadness phrases are
    sprinkled into both classes as distractor signals.
    """
    rng = np.random.default_rng(seed)
    instances = []
    for n in range(n_instances):
        positive = n % 2 == 0
        texts = [filler_sentence(rng) for _ in range(k)]
        planted = []
        if positive:
            for _ in range(rng.integers(3, 6)):
                ex = SELF_BLAME_EXAMPLES[rng.integers(len(SELF_BLAME_EXAMPLES))]
                planted.append(ex + _SELF_BLAME_TAILS[rng.integers(len(_SELF_BLAME_TAILS))])
            planted += [SLEEP_PHRASES[rng.integers(len(SLEEP_PHRASES))] for _ in range(rng.integers(2, 4))]
            planted += [AON_POSITIVE[rng.integers(len(AON_POSITIVE))] for _ in range(rng.integers(1, 3))]
        elif rng.random() < 0.3:
            planted.append(SLEEP_PHRASES[rng.integers(len(SLEEP_PHRASES))])
        for pool in (PIZZA_PHRASES, SAD_PHRASES):
            if rng.random() < 0.5:
                planted.append(pool[rng.integers(len(pool))])
        start = int(rng.integers(0, k - len(planted) + 1))
        texts[start : start + len(planted)] = planted
        texts = texts[:k]
        instances.append(Instance.from_texts(f"u{n:04d}", texts, "depression" if positive else "control"))
    return instances


PLANTED_MICROMODELS = ("self_blame", "sleep_kw", "aon")


def demo_config(run_dir="run"):
    return {
        "seed": 0,
        "run_dir": run_dir,
        "provider": {"kind": "fallback"},
        "lexicons": {"placeholder": "lexicon.json"},
        "micromodels": [
            {"name": "self_blame", "kind": "similarity-query",
             "params": {"examples": "self_blame_examples.jsonl", "threshold": 0.85}},
            {"name": "sleep_kw", "kind": "keyword-logic",
             "params": {"keywords": ["cannot sleep", "insomnia"]}},
            {"name": "aon", "kind": "linear-svm",
             "params": {"positives": "aon_pos.jsonl", "negatives": "aon_neg.jsonl"}},
            {"name": "pizza_kw", "kind": "keyword-logic", "params": {"keywords": ["pizza"]}},
            {"name": "sadness", "kind": "lexicon-logic",
             "params": {"lexicon": "placeholder", "category": "sadness"}},
        ],
        "aggregators": [{"kind": "ratio"}, {"kind": "window", "max_gap": 5, "min_hits": 3}],
        "ebm": {"max_bins": 32, "n_bags": 8, "n_rounds": 200, "learning_rate": 0.05},
        "task": {"positive_label": "depression", "threshold": 0.5},
        "data": {"train": "train.jsonl", "test": "test.jsonl"},
        "curve": {"fractions": [0.0625, 0.125, 0.25, 0.5, 1.0], "runs": 5},
        "collection": {
            "background": "background.jsonl",
            "seed_corpus": "collection_seed.jsonl",
            "threshold": 0.85,
            "iterations": 3,
            "mode": "auto",
            "q": 10,
        },
    }


def write_demo_project(directory, n_instances=200, seed=0) -> Path:
    """Write data files and ``config.json`` for the CLI into ``directory``."""
    from importlib import resources

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    instances = separable_task(n_instances, seed=seed)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(instances))
    n_test = len(instances) // 5
    test = [instances[i] for i in sorted(order[:n_test])]
    train = [instances[i] for i in sorted(order[n_test:])]
    save_instances(train, d / "train.jsonl")
    save_instances(test, d / "test.jsonl")
    save_corpus(Corpus.from_texts("self_blame", SELF_BLAME_EXAMPLES, "sb"), d / "self_blame_examples.jsonl")
    save_corpus(Corpus.from_texts("aon_pos", AON_POSITIVE, "ap"), d / "aon_pos.jsonl")
    negatives = AON_NEGATIVE + [filler_sentence(rng) for _ in range(30)]
    save_corpus(Corpus.from_texts("aon_neg", negatives, "an"), d / "aon_neg.jsonl")
    lexicon = resources.files("micromodels").joinpath("data/placeholder_lexicon.json").read_text(encoding="utf-8")
    (d / "lexicon.json").write_text(lexicon, encoding="utf-8")
    background, _, seed_corpus = planted_paraphrase_corpus(seed=seed)
    save_corpus(background, d / "background.jsonl")
    save_corpus(seed_corpus, d / "collection_seed.jsonl")
    (d / "config.json").write_text(json.dumps(demo_config(), indent=2), encoding="utf-8")
    return d / "config.json"


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "demo"
    print(write_demo_project(target))
