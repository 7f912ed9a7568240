import numpy as np
import pytest

from extsum import autodiff as ad
from extsum import encoder as enc
from extsum.autodiff import Tape, Tensor
from extsum.errors import PipelineError
from extsum.optim import grad_check
from extsum.rng import RngStream
from extsum.textprep import Document, EmbeddingTable, Vocabulary, pad_batch


def small_setup(widths=(1, 2, 3), word_dim=5, sent_dim=6, hidden_dim=4,
                seed=0, tokens=("alpha", "beta", "gamma", "delta", "eps",
                                "zeta", "eta", "theta")):
    doc = Document(id="v", sentences=[list(tokens)])
    vocab = Vocabulary.build([doc])
    rng = RngStream(seed)
    table = EmbeddingTable(
        rng.uniform(-0.5, 0.5, size=(len(vocab), word_dim)).astype(np.float32),
        np.zeros(len(vocab), dtype=bool), 0.0)
    table.matrix[vocab.pad_id] = 0.0
    emb = enc.WordEmbeddings.from_table(vocab, table)
    params = enc.init_reader_params(rng, word_dim, sent_dim, hidden_dim, widths)
    return vocab, emb, params


def reference_sentence_vector(tokens, emb, params, widths):
    """Double-precision loop: conv window by window, max, sum over widths."""
    ids = emb.vocab.encode_sentence(tokens)
    total = None
    for c in widths:
        padded = ids + [emb.vocab.pad_id] * max(0, c - len(ids))
        x = emb.table.data[np.array(padded)].astype(np.float64)
        k = params[f"conv_k{c}"].data.astype(np.float64)
        b = params[f"conv_b{c}"].data.astype(np.float64)
        n_windows = max(1, len(ids) - c + 1)
        feats = np.empty(params[f"conv_k{c}"].shape[0])
        for f in range(feats.shape[0]):
            best = -np.inf
            for j in range(n_windows):
                acc = b[f]
                for a in range(c):
                    acc += float(np.dot(x[j + a], k[f, a]))
                best = max(best, np.tanh(acc))
            feats[f] = best
        total = feats if total is None else total + feats
    return total


class TestEncodeSentence:
    def test_zero_kernels_give_zero_vector(self):
        vocab, emb, params = small_setup()
        for c in (1, 2, 3):
            params[f"conv_k{c}"].data[:] = 0.0
            params[f"conv_b{c}"].data[:] = 0.0
        v = enc.encode_sentence(["alpha", "beta"], emb, params)
        np.testing.assert_array_equal(v.data, np.zeros(6))

    def test_width_one_bank_alone(self):
        vocab, emb, params = small_setup()
        for c in (2, 3):
            params[f"conv_k{c}"].data[:] = 0.0
            params[f"conv_b{c}"].data[:] = 0.0
        v = enc.encode_sentence(["alpha"], emb, params)
        ref = reference_sentence_vector(["alpha"], emb, params, (1,))
        np.testing.assert_allclose(v.data, ref, atol=1e-5)

    def test_empty_sentence(self):
        vocab, emb, params = small_setup()
        with pytest.raises(PipelineError) as err:
            enc.encode_sentence([], emb, params)
        assert err.value.code == "empty-sentence"

    def test_matches_reference_loop(self):
        vocab, emb, params = small_setup(seed=3)
        tokens = ["alpha", "beta", "gamma", "delta", "eps"]
        v = enc.encode_sentence(tokens, emb, params)
        ref = reference_sentence_vector(tokens, emb, params, (1, 2, 3))
        np.testing.assert_allclose(v.data, ref, atol=1e-5)

    def test_short_sentence_pad_extension(self):
        vocab, emb, params = small_setup(seed=4)
        v = enc.encode_sentence(["alpha", "beta"], emb, params)   # width 3 > 2
        ref = reference_sentence_vector(["alpha", "beta"], emb, params,
                                        (1, 2, 3))
        np.testing.assert_allclose(v.data, ref, atol=1e-5)

    def test_width_one_order_insensitive(self):
        vocab, emb, params = small_setup(widths=(1,), seed=5)
        a = enc.encode_sentence(["alpha", "beta", "gamma"], emb, params)
        b = enc.encode_sentence(["gamma", "alpha", "beta"], emb, params)
        np.testing.assert_array_equal(a.data, b.data)

    def test_wider_kernels_are_order_sensitive(self):
        vocab, emb, params = small_setup(widths=(2,), seed=6)
        a = enc.encode_sentence(["alpha", "beta", "gamma"], emb, params)
        b = enc.encode_sentence(["gamma", "beta", "alpha"], emb, params)
        assert not np.allclose(a.data, b.data)


class TestEncodeDocument:
    def test_zero_weights_zero_states(self):
        vocab, emb, params = small_setup()
        params["doc_lstm"].data[:] = 0.0
        vecs = [Tensor(np.ones(6)), Tensor(np.full(6, -0.5))]
        out = enc.encode_document(vecs, params)
        for h in out.states:
            np.testing.assert_array_equal(h.data, np.zeros(4))

    def test_single_sentence_equals_one_step(self):
        vocab, emb, params = small_setup(seed=7)
        s = Tensor(RngStream(1).uniform(-1, 1, size=6).astype(np.float32))
        out = enc.encode_document([s], params)
        h, c = ad.lstm_step(s, ad.zeros((4,)), ad.zeros((4,)),
                            params["doc_lstm"])
        np.testing.assert_array_equal(out.states[0].data, h.data)
        np.testing.assert_array_equal(out.cells[0].data, c.data)

    def test_prefix_property(self):
        vocab, emb, params = small_setup(seed=8)
        rng = RngStream(2)
        vecs = [Tensor(rng.uniform(-1, 1, size=6).astype(np.float32))
                for _ in range(5)]
        full = enc.encode_document(vecs, params)
        for t in range(1, 6):
            part = enc.encode_document(vecs[:t], params)
            for i in range(t):
                np.testing.assert_array_equal(part.states[i].data,
                                              full.states[i].data)

    def test_empty_document(self):
        vocab, emb, params = small_setup()
        with pytest.raises(PipelineError):
            enc.encode_document([], params)


class TestBatchedEquivalence:
    def _docs(self):
        return [
            Document(id="a", sentences=[["alpha", "beta"],
                                        ["gamma", "delta", "eps", "zeta"]]),
            Document(id="b", sentences=[["eta"],
                                        ["theta", "alpha"],
                                        ["beta", "gamma", "delta"]]),
        ]

    def test_batched_equals_per_document(self):
        vocab, emb, params = small_setup(seed=9)
        docs = self._docs()
        batch = pad_batch(docs, vocab, min_words=3)
        out = enc.encode_batch(batch, emb, params)
        for b, doc in enumerate(docs):
            vecs = [enc.encode_sentence(s, emb, params)
                    for s in doc.sentences]
            single = enc.encode_document(vecs, params)
            for t in range(len(doc.sentences)):
                np.testing.assert_allclose(
                    out.sentence_vectors[t].data[b], vecs[t].data, atol=1e-5)
                np.testing.assert_allclose(
                    out.states[t].data[b], single.states[t].data, atol=1e-5)

    def test_padding_invariance(self):
        vocab, emb, params = small_setup(seed=10)
        docs = self._docs()
        short = pad_batch([docs[0]], vocab, min_words=3)
        both = pad_batch(docs, vocab, min_words=3)   # adds PAD sentences to a
        a_short = enc.encode_batch(short, emb, params)
        a_both = enc.encode_batch(both, emb, params)
        for t in range(2):
            np.testing.assert_allclose(a_both.states[t].data[0],
                                       a_short.states[t].data[0], atol=1e-5)

    def test_mask_marks_real_sentences(self):
        vocab, emb, params = small_setup()
        batch = pad_batch(self._docs(), vocab, min_words=3)
        out = enc.encode_batch(batch, emb, params)
        assert out.mask.tolist() == [[True, True, False],
                                     [True, True, True]]


class TestReaderGradients:
    def test_full_reader_grad_check(self):
        vocab, emb, params = small_setup(seed=11, widths=(1, 2),
                                         word_dim=3, sent_dim=4, hidden_dim=3)
        names = sorted(params)
        tensors = [params[n] for n in names] + [emb.table]

        def fn(ts):
            p = dict(zip(names, ts[:-1]))
            e = enc.WordEmbeddings(vocab, ts[-1])
            v1 = enc.encode_sentence(["alpha", "beta", "gamma"], e, p)
            v2 = enc.encode_sentence(["delta", "eps"], e, p)
            out = enc.encode_document([v1, v2], p)
            return ad.tsum(ad.add(out.states[0], out.states[1]))

        res = grad_check(fn, tensors)
        assert res.max_rel_error < 1e-4
