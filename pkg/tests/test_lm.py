"""Count-table model: training arithmetic, fine-tuning, persistence."""

import json

import numpy as np
import pytest

from submix.corpus import UserCorpus, build_vocab, code_vocab, tokenize
from submix.errors import ModelFormatError, ParameterError
from submix.lm import (
    ConstantModel,
    NGramModel,
    avg_pair_pmf,
    fine_tune,
    load_model,
    pretrain,
    save_model,
)
from submix.probdist import Pmf


def ab_vocab():
    return build_vocab(["ab"], "character")


class TestPretrain:
    def test_bigram_counts_with_add_one(self):
        # two-token vocabulary a=0, b=1: "abab" has bigrams ab, ba, ab,
        # so P(b|a) = (2+1)/(2+2)
        model = pretrain([[0, 1, 0, 1]], order=2, vocab_size=2, k_add=1.0)
        assert model.next_token_pmf([0])[1] == pytest.approx(0.75)

    def test_unseen_context_is_uniform(self):
        vocab = ab_vocab()
        model = pretrain([tokenize("abab", vocab)], 3, vocab.size)
        pmf = model.next_token_pmf([vocab.id_of("b"), vocab.id_of("b")])
        assert np.allclose(pmf.probs, 1.0 / vocab.size)

    def test_empty_corpus_is_uniform_everywhere(self):
        model = pretrain([], 3, 5)
        for ctx in ([], [1], [2, 3]):
            assert np.allclose(model.next_token_pmf(ctx).probs, 0.2)

    def test_all_pmfs_strictly_positive_and_normalized(self):
        vocab = ab_vocab()
        model = pretrain([tokenize("abba", vocab)], 2, vocab.size, k_add=0.1)
        for ctx in ([], [0], [1], [2], [1, 2]):
            pmf = model.next_token_pmf(ctx)
            assert np.all(pmf.probs > 0.0)
            assert abs(pmf.probs.sum() - 1.0) < 1e-9

    def test_context_truncation_metamorphic(self):
        vocab = ab_vocab()
        model = pretrain([tokenize("ababba", vocab)], 3, vocab.size)
        rng = np.random.default_rng(0)
        base_ctx = [vocab.id_of("a"), vocab.id_of("b")]
        base = model.next_token_pmf(base_ctx)
        for _ in range(10):
            prefix = [int(rng.integers(0, vocab.size)) for _ in range(int(rng.integers(1, 6)))]
            assert model.next_token_pmf(prefix + base_ctx) == base

    def test_rejects_bad_params(self):
        with pytest.raises(ParameterError):
            NGramModel(0, 4)
        with pytest.raises(ParameterError):
            NGramModel(2, 4, k_add=0.0)


class TestFineTune:
    def test_empty_subpart_is_identity(self):
        vocab = ab_vocab()
        base = pretrain([tokenize("abab", vocab)], 2, vocab.size)
        tuned = fine_tune(base, [])
        for ctx in ([], [1], [2]):
            assert tuned.next_token_pmf(ctx) == base.next_token_pmf(ctx)

    def test_base_unchanged(self):
        vocab = ab_vocab()
        base = pretrain([tokenize("ab", vocab)], 2, vocab.size)
        before = base.next_token_pmf([vocab.id_of("a")])
        fine_tune(base, [UserCorpus.from_texts("u", ["aaaa"], vocab)], weight=50.0)
        assert base.next_token_pmf([vocab.id_of("a")]) == before

    def test_large_weight_memorizes_first_secret_digit(self):
        vocab = code_vocab()
        prompt = tokenize("My number is: ", vocab)
        base = pretrain([], order=4, vocab_size=vocab.size)
        user = UserCorpus.from_texts("u", ["My number is: 042"], vocab)
        tuned = fine_tune(base, [user], weight=100.0)
        pmf = tuned.next_token_pmf(prompt)
        assert vocab.token(int(np.argmax(pmf.probs))) == "0"

    def test_tiny_weight_converges_to_base(self):
        vocab = ab_vocab()
        base = pretrain([tokenize("abab", vocab)], 2, vocab.size)
        tuned = fine_tune(base, [UserCorpus.from_texts("u", ["bb"], vocab)], weight=1e-6)
        for ctx in ([], [1], [2]):
            diff = np.abs(tuned.next_token_pmf(ctx).probs - base.next_token_pmf(ctx).probs)
            assert np.max(diff) < 1e-4

    def test_disjoint_subparts_differ_on_private_text(self):
        vocab = ab_vocab()
        base = pretrain([tokenize("ab", vocab)], 2, vocab.size)
        t1 = fine_tune(base, [UserCorpus.from_texts("u1", ["aaaa"], vocab)])
        t2 = fine_tune(base, [UserCorpus.from_texts("u2", ["abbb"], vocab)])
        ctx = [vocab.id_of("a")]
        assert t1.next_token_pmf(ctx) != t2.next_token_pmf(ctx)


class TestAvgPair:
    def test_identical_models(self):
        m = ConstantModel(Pmf([0.25, 0.75]))
        assert avg_pair_pmf(m, m, []) == Pmf([0.25, 0.75])

    def test_point_masses(self):
        a, b = ConstantModel(Pmf([1.0, 0.0])), ConstantModel(Pmf([0.0, 1.0]))
        assert np.allclose(avg_pair_pmf(a, b, []).probs, [0.5, 0.5])

    def test_arithmetic(self):
        a, b = ConstantModel(Pmf([0.8, 0.2])), ConstantModel(Pmf([0.4, 0.6]))
        assert np.allclose(avg_pair_pmf(a, b, []).probs, [0.6, 0.4])


class TestPersistence:
    def build(self):
        vocab = ab_vocab()
        docs = [tokenize("ababba", vocab), tokenize("babab", vocab)]
        return vocab, pretrain(docs, 3, vocab.size, k_add=0.25)

    def test_round_trip_pmf_equality(self, tmp_path):
        vocab, model = self.build()
        save_model(model, tmp_path / "m.json")
        loaded = load_model(tmp_path / "m.json")
        rng = np.random.default_rng(4)
        for _ in range(100):
            ctx = [int(rng.integers(0, vocab.size)) for _ in range(int(rng.integers(0, 4)))]
            assert loaded.next_token_pmf(ctx) == model.next_token_pmf(ctx)

    def test_corrupted_header(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_wrong_format_header(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format": "other", "version": 1}), encoding="utf-8")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_version_mismatch(self, tmp_path):
        vocab, model = self.build()
        path = tmp_path / "m.json"
        save_model(model, path)
        payload = json.loads(path.read_text(encoding="utf-8"))
        payload["version"] = 99
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(ModelFormatError) as err:
            load_model(path)
        assert "version" in str(err.value)
