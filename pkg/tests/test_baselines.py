import numpy as np
import pytest

from extsum.baselines import (FEATURE_NAMES, LregModel, lead3,
                              lreg_features, lreg_label_accuracy,
                              lreg_summarize, predict_lreg,
                              sentence_mean_embedding, train_lreg)
from extsum.errors import PipelineError
from extsum.rng import RngStream
from extsum.rouge import LimitSpec, truncate
from extsum.textprep import Document, EmbeddingTable, build_vocab


def doc_of(sentences, labels=None, doc_id="d"):
    return Document(id=doc_id, sentences=[list(s) for s in sentences],
                    labels=labels)


def table_for(vocab, assignments, dim):
    """Zero matrix with explicit rows for the named tokens."""
    m = np.zeros((len(vocab), dim), dtype=np.float32)
    for tok, vec in assignments.items():
        m[vocab.encode(tok)] = vec
    return EmbeddingTable(m, np.zeros(len(vocab), dtype=bool), 0.0)


class TestLead3:
    def test_short_document_returns_everything(self):
        doc = doc_of([["a", "b"], ["c"]])
        out = lead3(doc)
        assert out["sentence_indices"] == [0, 1]
        assert out["tokens"] == ["a", "b", "c"]

    def test_empty_document(self):
        out = lead3(doc_of([]))
        assert out["sentence_indices"] == []
        assert out["tokens"] == []

    def test_takes_first_three(self):
        doc = doc_of([["s0"], ["s1"], ["s2"], ["s3"], ["s4"]])
        assert lead3(doc)["tokens"] == ["s0", "s1", "s2"]

    def test_prefix_property(self):
        rng = RngStream(3)
        for _ in range(50):
            n = int(rng.integers(0, 6))
            doc = doc_of([[f"w{i}{j}" for j in range(int(rng.integers(1, 5)))]
                          for i in range(n)])
            flat = [t for s in doc.sentences for t in s]
            toks = lead3(doc, limit=LimitSpec("words", 4))["tokens"]
            assert toks == flat[:len(toks)]

    def test_limit_matches_eval_truncation(self):
        doc = doc_of([["ab", "cd"], ["ef"], ["gh"], ["ignored"]])
        flat = ["ab", "cd", "ef", "gh"]
        for limit in (LimitSpec("words", 3), LimitSpec("bytes", 5),
                      LimitSpec("none")):
            assert lead3(doc, limit=limit)["tokens"] == truncate(flat, limit)


class TestLregFeatures:
    def orthogonal_fixture(self):
        doc = doc_of([["aa"], ["bb"], ["cc"]])
        vocab = build_vocab([doc], 1)
        r = 1 / np.sqrt(2)
        table = table_for(vocab, {"aa": [1.0, 0.0], "bb": [0.0, 1.0],
                                  "cc": [r, r]}, dim=2)
        return doc, vocab, table

    def test_hand_computed_cosines(self):
        doc, vocab, table = self.orthogonal_fixture()
        feats = lreg_features(doc, vocab, table)
        r = 1 / np.sqrt(2)
        # raw cohesion sums are (r, r, 2r); the maximum rescales to 1
        np.testing.assert_allclose(feats[:, 3], [0.5, 0.5, 1.0], atol=1e-9)
        # document mean points along (1, 1); "cc" aligns with it exactly
        np.testing.assert_allclose(feats[:, 4], [r, r, 1.0], atol=1e-9)

    def test_length_position_entities(self):
        doc = doc_of([["entity0", "met", "entity1"], ["only", "words"]])
        vocab = build_vocab([doc], 1)
        table = table_for(vocab, {}, dim=3)
        feats = lreg_features(doc, vocab, table)
        np.testing.assert_array_equal(feats[:, 0], [3, 2])
        np.testing.assert_array_equal(feats[:, 1], [0, 1])
        np.testing.assert_array_equal(feats[:, 2], [2, 0])

    def test_identical_sentences_share_cohesion(self):
        doc = doc_of([["same", "words"]] * 4)
        vocab = build_vocab([doc], 1)
        rng = RngStream(5)
        m = rng.uniform(-1, 1, size=(len(vocab), 3)).astype(np.float32)
        table = EmbeddingTable(m, np.zeros(len(vocab), dtype=bool), 0.0)
        feats = lreg_features(doc, vocab, table)
        np.testing.assert_allclose(feats[:, 3], 1.0, atol=1e-7)
        np.testing.assert_allclose(feats[:, 4], 1.0, atol=1e-7)

    def test_single_sentence_cohesion_zero(self):
        doc = doc_of([["one", "sentence"]])
        vocab = build_vocab([doc], 1)
        rng = RngStream(6)
        m = rng.uniform(0.1, 1, size=(len(vocab), 3)).astype(np.float32)
        table = EmbeddingTable(m, np.zeros(len(vocab), dtype=bool), 0.0)
        feats = lreg_features(doc, vocab, table)
        assert feats.shape == (1, 5)
        assert feats[0, 3] == 0.0
        assert feats[0, 4] == pytest.approx(1.0)

    def test_zero_embeddings_are_safe(self):
        doc = doc_of([["aa"], ["bb"]])
        vocab = build_vocab([doc], 1)
        table = table_for(vocab, {}, dim=2)
        feats = lreg_features(doc, vocab, table)
        assert np.all(np.isfinite(feats))
        np.testing.assert_array_equal(feats[:, 3], 0.0)
        np.testing.assert_array_equal(feats[:, 4], 0.0)

    def test_empty_document(self):
        doc = doc_of([])
        vocab = build_vocab([doc_of([["x"]])], 1)
        table = table_for(vocab, {}, dim=2)
        assert lreg_features(doc, vocab, table).shape == (0, 5)

    def test_mean_embedding(self):
        doc = doc_of([["aa", "bb"]])
        vocab = build_vocab([doc], 1)
        table = table_for(vocab, {"aa": [2.0, 0.0], "bb": [0.0, 4.0]}, dim=2)
        vec = sentence_mean_embedding(["aa", "bb"], vocab, table)
        np.testing.assert_allclose(vec, [1.0, 2.0])
        np.testing.assert_array_equal(
            sentence_mean_embedding([], vocab, table), [0.0, 0.0])


def separable_corpus(n_docs=4, seed=9):
    # label 1 sentences are long, label 0 sentences short: length separates
    rng = RngStream(seed)
    docs = []
    for d in range(n_docs):
        sents, labels = [], []
        for i in range(4):
            if int(rng.integers(0, 2)):
                sents.append([f"w{d}{i}{j}" for j in range(6)])
                labels.append(1)
            else:
                sents.append([f"w{d}{i}{j}" for j in range(2)])
                labels.append(0)
        # force both classes into every document
        labels[0], labels[1] = 0, 1
        sents[0], sents[1] = sents[0][:2], (sents[1] * 3)[:6]
        docs.append(doc_of(sents, labels, doc_id=f"doc{d}"))
    return docs


class TestTrainLreg:
    def setup_corpus(self):
        docs = separable_corpus()
        vocab = build_vocab(docs, 1)
        rng = RngStream(2)
        m = rng.uniform(-0.5, 0.5,
                        size=(len(vocab), 4)).astype(np.float32)
        return docs, vocab, EmbeddingTable(
            m, np.zeros(len(vocab), dtype=bool), 0.0)

    def test_errors(self):
        docs, vocab, table = self.setup_corpus()
        with pytest.raises(PipelineError) as e:
            train_lreg([], vocab, table)
        assert e.value.code == "no-training-data"
        with pytest.raises(PipelineError) as e:
            train_lreg([doc_of([["a"]])], vocab, table)
        assert e.value.code == "missing-labels"
        ones = [doc_of([["a"], ["b"]], labels=[1, 1])]
        with pytest.raises(PipelineError) as e:
            train_lreg(ones, vocab, table)
        assert e.value.code == "degenerate-labels"

    def test_separable_fixture_fits_perfectly(self):
        docs, vocab, table = self.setup_corpus()
        model = train_lreg(docs, vocab, table)
        assert lreg_label_accuracy(docs, model, vocab, table) == 1.0

    def test_zero_weight_model_gives_half(self):
        docs, vocab, table = self.setup_corpus()
        model = LregModel(np.zeros(5), 0.0, np.zeros(5), np.ones(5))
        probs = predict_lreg(docs[0], model, vocab, table)
        np.testing.assert_allclose(probs, 0.5)

    def test_duplication_invariance(self):
        docs, vocab, table = self.setup_corpus()
        m1 = train_lreg(docs, vocab, table)
        m2 = train_lreg(docs + docs, vocab, table)
        np.testing.assert_allclose(m1.weights, m2.weights, atol=1e-9)
        assert m1.bias == pytest.approx(m2.bias, abs=1e-9)

    def test_deterministic(self):
        docs, vocab, table = self.setup_corpus()
        m1 = train_lreg(docs, vocab, table)
        m2 = train_lreg(docs, vocab, table)
        np.testing.assert_array_equal(m1.weights, m2.weights)
        assert m1.bias == m2.bias

    def test_roundtrip(self):
        docs, vocab, table = self.setup_corpus()
        model = train_lreg(docs, vocab, table)
        back = LregModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(model.weights, back.weights)
        np.testing.assert_array_equal(model.mean, back.mean)
        np.testing.assert_array_equal(model.std, back.std)
        assert model.bias == back.bias

    def test_summarize_selects_high_probability_sentences(self):
        docs, vocab, table = self.setup_corpus()
        model = train_lreg(docs, vocab, table)
        out = lreg_summarize(docs[0], model, vocab, table, k=2)
        assert len(out["sentence_indices"]) <= 2
        assert out["sentence_indices"] == sorted(out["sentence_indices"])
        probs = predict_lreg(docs[0], model, vocab, table)
        worst_chosen = min(probs[i] for i in out["sentence_indices"])
        rest = [p for i, p in enumerate(probs)
                if i not in out["sentence_indices"]]
        assert all(worst_chosen >= p for p in rest)
        assert len(out["scores"]) == len(docs[0].sentences)

    def test_feature_name_count_matches(self):
        assert len(FEATURE_NAMES) == 5
