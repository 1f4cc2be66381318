import json

import numpy as np
import pytest

from micromodels.core import Corpus, Instance, Lexicon
from micromodels.embedding import EmbeddingProvider, FallbackEmbedder
from micromodels.exceptions import ConfigurationError, IntegrityError
from micromodels.models import (
    KeywordMicromodel,
    LexiconMicromodel,
    MicromodelRegistry,
    MicromodelSpec,
    SimilarityMicromodel,
    build_micromodel,
    micromodel_from_dict,
    run_keyword_logic,
    run_lexicon_logic,
    run_micromodel,
    train_svm_micromodel,
)


class _TableProvider(EmbeddingProvider):
    """Returns fixed vectors by text; unknown texts map to e_{dim-1}."""

    def __init__(self, table, dim):
        self.table, self.dim = table, dim

    @property
    def fingerprint(self):
        return "table"

    def embed_many(self, texts):
        out = []
        for t in texts:
            v = np.zeros(self.dim)
            v[self.table.get(t, self.dim - 1)] = 1.0
            out.append(v)
        return np.array(out).reshape(len(texts), self.dim)


def _svm_corpora():
    pos = Corpus.from_texts("p", ["alpha one", "alpha two three", "the alpha", "alpha alpha four"], "p")
    neg = Corpus.from_texts("n", ["beta five", "six beta", "beta the seven", "beta eight nine"], "n")
    return pos, neg


class TestKeywordLogic:
    def test_instance_bits(self):
        mm = KeywordMicromodel("sad_kw", ["sad"])
        hv = run_micromodel(mm, Instance.from_texts("i", ["I feel sad", "fine today"]))
        assert hv.bits == (1, 0)
        assert hv.hit_indices == [0]

    def test_ngram_case_insensitive(self):
        assert run_keyword_logic([("panic", "attack")], "had a Panic Attack today") == 1

    def test_ngram_must_be_contiguous(self):
        assert run_keyword_logic([("panic", "attack")], "panic then an attack") == 0

    def test_absent_token(self):
        assert run_keyword_logic([("ptsd",)], "posttraumatic stress") == 0

    def test_empty_text(self):
        assert run_keyword_logic([("sad",)], "") == 0

    def test_empty_keyword_list(self):
        with pytest.raises(ConfigurationError):
            KeywordMicromodel("k", [])
        with pytest.raises(ConfigurationError):
            KeywordMicromodel("k", ["..."])


class TestLexiconLogic:
    def test_wildcard(self):
        lex = Lexicon("l", {"sadness": ["hopeless*"]})
        assert run_lexicon_logic(lex, "sadness", "feeling hopelessness") == 1

    def test_no_substring_match(self):
        lex = Lexicon("l", {"joy": ["happy"]})
        assert run_lexicon_logic(lex, "joy", "so unhappy") == 0

    def test_empty(self):
        lex = Lexicon("l", {"joy": ["happy"]})
        assert run_lexicon_logic(lex, "joy", "") == 0

    def test_unknown_category(self, placeholder):
        with pytest.raises(ConfigurationError):
            LexiconMicromodel("m", placeholder, "nostalgia")

    def test_model_snapshots_category(self):
        lex = Lexicon("l", {"joy": ["happy"], "anger": ["mad"]})
        mm = LexiconMicromodel("m", lex, "joy")
        assert mm.payload() == {"lexicon": "l", "category": "joy", "entries": ["happy"]}


class TestSVM:
    def test_training_set_accuracy(self):
        pos, neg = _svm_corpora()
        mm = train_svm_micromodel("ab", pos, neg)
        assert [mm.score_utterance(t)[0] for t in pos.texts] == [1] * len(pos)
        assert [mm.score_utterance(t)[0] for t in neg.texts] == [0] * len(neg)

    def test_out_of_vocabulary_is_zero_margin(self):
        mm = train_svm_micromodel("ab", *_svm_corpora())
        assert mm.margin("zebra quokka") == 0.0
        assert mm.score_utterance("zebra quokka") == (0, 0.0)
        assert mm.score_utterance("") == (0, 0.0)

    def test_duplicate_across_classes(self):
        pos = Corpus.from_texts("p", ["same words", "alpha"], "p")
        neg = Corpus.from_texts("n", ["same words", "beta"], "n")
        train_svm_micromodel("dup", pos, neg)

    def test_deterministic(self):
        a = train_svm_micromodel("ab", *_svm_corpora(), seed=3)
        b = train_svm_micromodel("ab", *_svm_corpora(), seed=3)
        assert a.to_json() == b.to_json()

    def test_subgradient_objective_below_zero_model(self):
        pos, neg = _svm_corpora()
        mm = train_svm_micromodel("ab", pos, neg)
        X = np.array([mm.vectorize(t) for t in pos.texts + neg.texts])
        y = np.array([1.0] * len(pos) + [-1.0] * len(neg))
        w = mm.weights
        objective = 0.005 * w @ w + np.mean(np.maximum(0.0, 1.0 - y * (X @ w)))
        assert objective < 1.0  # value at w = 0

    def test_empty_corpus(self):
        pos, _ = _svm_corpora()
        with pytest.raises(ConfigurationError):
            train_svm_micromodel("ab", pos, Corpus("n"))


class TestSimilarity:
    def test_exact_example_hits_with_similarity_one(self, fallback):
        ex = Corpus.from_texts("e", ["i can't focus at all", "nothing feels right"], "e")
        mm = SimilarityMicromodel("sim", ex, fallback, threshold=0.85)
        assert mm.score_utterance("nothing feels right") == (1, 1.0)
        mm1 = SimilarityMicromodel("sim", ex, fallback, threshold=1.0)
        assert mm1.score_utterance("nothing feels right") == (1, 1.0)

    def test_orthogonal(self):
        prov = _TableProvider({"ex": 0, "u": 1}, 3)
        mm = SimilarityMicromodel("sim", Corpus.from_texts("e", ["ex"]), prov)
        assert mm.score_utterance("u") == (0, 0.0)

    def test_near_duplicate_hits(self, fallback):
        ex = Corpus.from_texts("e", ["i can't focus at all"], "e")
        mm = SimilarityMicromodel("sim", ex, fallback, threshold=0.85)
        a, b = fallback.embed("i cant focus at all"), fallback.embed("i can't focus at all")
        brute = float(a @ b)
        assert brute >= 0.85
        bit, smax = mm.score_utterance("i cant focus at all")
        assert bit == 1
        assert smax == pytest.approx(brute, abs=1e-12)

    def test_max_over_examples(self, fallback):
        texts = ["i feel fine", "i can't focus at all", "the sky is blue"]
        mm = SimilarityMicromodel("sim", Corpus.from_texts("e", texts), fallback)
        q = "i cant focus at all"
        expected = max(float(fallback.embed(q) @ fallback.embed(t)) for t in texts)
        assert mm.score_utterance(q)[1] == pytest.approx(expected, abs=1e-12)

    def test_batch_matches_single(self, fallback):
        ex = Corpus.from_texts("e", ["i can't focus at all", "i hate mornings"])
        mm = SimilarityMicromodel("sim", ex, fallback)
        texts = ["i cant focus", "mornings are bad", "", "i hate mornings"]
        assert mm.score_texts(texts) == [mm.score_utterance(t) for t in texts]

    def test_empty_examples(self, fallback):
        with pytest.raises(ConfigurationError):
            SimilarityMicromodel("sim", Corpus("e"), fallback)

    @pytest.mark.parametrize("thr", [0.0, 1.01, -0.2])
    def test_threshold_range(self, fallback, thr):
        with pytest.raises(ConfigurationError):
            SimilarityMicromodel("sim", Corpus.from_texts("e", ["x"]), fallback, threshold=thr)
        with pytest.raises(ConfigurationError):
            MicromodelSpec("sim", "similarity-query", {"threshold": thr})


class TestFreeze:
    def test_embeddings_read_only(self, fallback):
        mm = SimilarityMicromodel("sim", Corpus.from_texts("e", ["x y z"]), fallback)
        with pytest.raises(ValueError):
            mm.embeddings[0, 0] = 2.0

    def test_svm_weights_read_only(self):
        mm = train_svm_micromodel("ab", *_svm_corpora())
        with pytest.raises(ValueError):
            mm.weights[0] = 1.0

    def test_running_does_not_change_fingerprint(self, fallback, placeholder):
        reg = MicromodelRegistry([
            KeywordMicromodel("k", ["sad"]),
            LexiconMicromodel("l", placeholder, "sadness"),
            train_svm_micromodel("s", *_svm_corpora()),
            SimilarityMicromodel("q", Corpus.from_texts("e", ["i am sad"]), fallback),
        ])
        before = reg.fingerprint
        inst = Instance.from_texts("i", ["i am sad", "alpha", "hopeless", ""])
        for mm in reg:
            run_micromodel(mm, inst)
        assert reg.fingerprint == before


class TestSerialization:
    def test_round_trip_every_kind(self, fallback, placeholder):
        models = [
            KeywordMicromodel("k", ["sad", "panic attack"]),
            LexiconMicromodel("l", placeholder, "negemo"),
            train_svm_micromodel("s", *_svm_corpora()),
            SimilarityMicromodel("q", Corpus.from_texts("e", ["i am sad", "so tired"]), fallback, 0.9),
        ]
        inst = Instance.from_texts("i", ["i am sad", "alpha beta", "hopeless days", "panic attack", ""])
        for mm in models:
            back = micromodel_from_dict(json.loads(mm.to_json()), fallback)
            assert back.to_json() == mm.to_json()
            assert run_micromodel(back, inst) == run_micromodel(mm, inst)

    def test_provider_mismatch(self, fallback):
        mm = SimilarityMicromodel("q", Corpus.from_texts("e", ["x"]), fallback)
        with pytest.raises(ConfigurationError):
            micromodel_from_dict(mm.to_dict(), FallbackEmbedder(dim=64))

    def test_registry_save_load(self, tmp_path, fallback):
        reg = MicromodelRegistry([KeywordMicromodel("k", ["sad"]),
                                  SimilarityMicromodel("q", Corpus.from_texts("e", ["x"]), fallback)])
        reg.save(tmp_path)
        back = MicromodelRegistry.load(tmp_path, fallback)
        assert back.names == ["k", "q"]
        assert back.fingerprint == reg.fingerprint

    def test_registry_tamper_detected(self, tmp_path):
        MicromodelRegistry([KeywordMicromodel("k", ["sad"])]).save(tmp_path)
        doc = json.loads((tmp_path / "k.json").read_text())
        doc["keywords"] = [["happy"]]
        (tmp_path / "k.json").write_text(json.dumps(doc))
        with pytest.raises(IntegrityError):
            MicromodelRegistry.load(tmp_path)

    def test_duplicate_names(self):
        with pytest.raises(ConfigurationError):
            MicromodelRegistry([KeywordMicromodel("k", ["a"]), KeywordMicromodel("k", ["b"])])


class TestBuild:
    def test_build_from_specs(self, tmp_path, fallback, placeholder):
        from micromodels.core import save_corpus

        pos, neg = _svm_corpora()
        save_corpus(pos, tmp_path / "pos.jsonl")
        save_corpus(neg, tmp_path / "neg.jsonl")
        save_corpus(Corpus.from_texts("e", ["i am sad"]), tmp_path / "ex.jsonl")
        specs = [MicromodelSpec.from_dict(d) for d in [
            {"name": "k", "kind": "keyword-logic", "params": {"keywords": ["sad"]}},
            {"name": "l", "kind": "lexicon-logic", "params": {"lexicon": "p", "category": "joy"}},
            {"name": "s", "kind": "linear-svm", "params": {"positives": "pos.jsonl", "negatives": "neg.jsonl"}},
            {"name": "q", "kind": "similarity-query", "params": {"examples": "ex.jsonl"}},
        ]]
        reg = MicromodelRegistry.build(specs, fallback, {"p": placeholder}, tmp_path)
        assert reg.names == ["k", "l", "s", "q"]
        assert reg.models[3].threshold == 0.85

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            MicromodelSpec("x", "transformer", {})

    def test_unknown_lexicon(self):
        spec = MicromodelSpec("l", "lexicon-logic", {"lexicon": "liwc", "category": "negemo"})
        with pytest.raises(ConfigurationError):
            build_micromodel(spec, lexicons={})
