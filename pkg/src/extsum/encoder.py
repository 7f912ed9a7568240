"""Document reader: convolutional sentence encoder (multi-width kernels,
max-over-time pooling, widths summed) and an LSTM document encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from extsum import autodiff as ad
from extsum.autodiff import Tensor
from extsum.errors import PipelineError
from extsum.rng import RngStream
from extsum.textprep import Batch, EmbeddingTable, Vocabulary


@dataclass
class WordEmbeddings:
    vocab: Vocabulary
    table: Tensor   # (|V|, d)

    @classmethod
    def from_table(cls, vocab: Vocabulary, table: EmbeddingTable,
                   trainable: bool = True) -> "WordEmbeddings":
        return cls(vocab, Tensor(table.matrix.copy(),
                                 requires_grad=trainable))

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def init_reader_params(rng: RngStream, word_dim: int, sent_dim: int,
                       hidden_dim: int, widths,
                       init_range: float = 0.05) -> dict[str, Tensor]:
    """Kernel bank + bias per width, and the document LSTM gate weights."""
    params = {}
    for c in widths:
        params[f"conv_k{c}"] = ad.uniform_tensor(
            rng, (sent_dim, c, word_dim), init_range)
        params[f"conv_b{c}"] = ad.uniform_tensor(rng, (sent_dim,), init_range)
    params["doc_lstm"] = ad.uniform_tensor(
        rng, (sent_dim + hidden_dim, 4 * hidden_dim), init_range)
    return params


def reader_widths(params: dict[str, Tensor]):
    return sorted(int(k[len("conv_k"):]) for k in params if k.startswith("conv_k"))


@dataclass
class DocumentEncoding:
    sentence_vectors: list[Tensor]   # per step: (F,) or (batch, F)
    states: list[Tensor]             # per step: (H,) or (batch, H)
    cells: list[Tensor]
    mask: np.ndarray | None = None   # (batch, steps) for batched encodings

    def __len__(self) -> int:
        return len(self.states)


def _pooled_rows(ids: np.ndarray, word_mask: np.ndarray, emb: WordEmbeddings,
                 params: dict[str, Tensor]) -> Tensor:
    """Sentence vectors for N id rows: conv per width, masked max pool, sum.

    Window j of width c covers tokens j..j+c-1, so with left-aligned masks it
    is fully real iff position j+c-1 is real. Window 0 is always kept: for a
    sentence shorter than the kernel it holds the whole sentence plus PAD
    (the PAD-extension policy), and fully-padded rows are masked downstream.
    """
    n_rows, width = ids.shape
    x = ad.gather_rows(emb.table, ids)
    total = None
    for c in reader_widths(params):
        ids_c, mask_c, x_c = ids, word_mask, x
        if width < c:
            pad = np.zeros((n_rows, c - width), dtype=ids.dtype)
            ids_c = np.concatenate([ids, pad], axis=1)
            mask_c = np.concatenate(
                [word_mask, np.zeros((n_rows, c - width), dtype=bool)], axis=1)
            x_c = ad.gather_rows(emb.table, ids_c)
        valid = mask_c[:, c - 1:].copy()
        valid[:, 0] = True
        out = ad.conv1d_bank(x_c, params[f"conv_k{c}"], params[f"conv_b{c}"])
        pooled, _ = ad.max_pool_time(out, valid)
        total = pooled if total is None else ad.add(total, pooled)
    return total


def encode_sentence(tokens: list[str], emb: WordEmbeddings,
                    params: dict[str, Tensor]) -> Tensor:
    """One sentence to its fixed-size vector (sum of per-width pooled maps)."""
    if not tokens:
        raise PipelineError("empty-sentence", "cannot encode zero tokens")
    ids = np.array([emb.vocab.encode_sentence(tokens)], dtype=np.int32)
    mask = np.ones_like(ids, dtype=bool)
    vec = _pooled_rows(ids, mask, emb, params)
    return ad.reshape(vec, (vec.shape[1],))


def encode_document(sentence_vectors: list[Tensor],
                    params: dict[str, Tensor]) -> DocumentEncoding:
    """Forward LSTM over sentence vectors from a zero initial state."""
    if not sentence_vectors:
        raise PipelineError("shape-error", "document with no sentence vectors")
    hidden = params["doc_lstm"].shape[1] // 4
    first = sentence_vectors[0]
    state_shape = (hidden,) if first.ndim == 1 else (first.shape[0], hidden)
    h = ad.zeros(state_shape)
    c = ad.zeros(state_shape)
    states, cells = [], []
    for s in sentence_vectors:
        h, c = ad.lstm_step(s, h, c, params["doc_lstm"])
        states.append(h)
        cells.append(c)
    return DocumentEncoding(list(sentence_vectors), states, cells)


def encode_batch(batch: Batch, emb: WordEmbeddings, params: dict[str, Tensor],
                 dropout_p: float = 0.0, train: bool = False,
                 rng: RngStream | None = None) -> DocumentEncoding:
    """Batched reader pass; dropout (if any) hits the LSTM inputs."""
    n_docs, n_sents, n_words = batch.word_ids.shape
    flat_ids = batch.word_ids.reshape(n_docs * n_sents, n_words)
    flat_mask = batch.word_mask.reshape(n_docs * n_sents, n_words)
    pooled = _pooled_rows(flat_ids, flat_mask, emb, params)
    sent_dim = pooled.shape[1]
    stacked = ad.reshape(pooled, (n_docs, n_sents, sent_dim))

    clean = [ad.time_slice(stacked, t) for t in range(n_sents)]
    dropped = [ad.dropout(s, dropout_p, train=train, rng=rng) for s in clean]
    enc = encode_document(dropped, params)
    enc.sentence_vectors = clean   # consumers apply their own input dropout
    enc.mask = batch.sentence_mask
    return enc
