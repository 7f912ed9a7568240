"""LEAD baseline and a logistic-regression sentence classifier over five
engineered features (length, position, entity count, cohesion, relevance)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from extsum.errors import PipelineError
from extsum.extractors import select_summary_sentences
from extsum.rouge import LimitSpec, truncate
from extsum.textprep import Document, EmbeddingTable, Vocabulary, \
    is_entity_marker

FEATURE_NAMES = ("length", "position", "entities", "cohesion", "relevance")


def lead3(doc: Document, k: int = 3, limit: LimitSpec | None = None) -> dict:
    """First k sentences, then token-level truncation to the limit.

    The output token list is always a prefix of the flattened document.
    """
    idx = list(range(min(k, len(doc.sentences))))
    tokens = [t for i in idx for t in doc.sentences[i]]
    if limit is not None:
        tokens = truncate(tokens, limit)
    return {"id": doc.id, "sentence_indices": idx, "tokens": tokens}


def sentence_mean_embedding(tokens: list[str], vocab: Vocabulary,
                            table: EmbeddingTable) -> np.ndarray:
    """Mean of the word vectors, float64; zeros for an empty sentence."""
    if not tokens:
        return np.zeros(table.dim, dtype=np.float64)
    rows = table.matrix[[vocab.encode(t) for t in tokens]]
    return rows.astype(np.float64).mean(axis=0)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _max_normalize(values: np.ndarray) -> np.ndarray:
    # per-document maximum; left untouched when no value is positive
    top = values.max() if values.size else 0.0
    return values / top if top > 0.0 else values


def lreg_features(doc: Document, vocab: Vocabulary,
                  table: EmbeddingTable) -> np.ndarray:
    """(n_sentences, 5) matrix: length, position, entity count, cohesion,
    relevance.

    Cohesion sums the cosine similarities between a sentence's mean word
    embedding and every other sentence's, then divides by the per-document
    maximum; a single-sentence document gets cohesion 0. Relevance is the
    cosine against the whole document's mean embedding, normalized the same
    way.
    """
    n = len(doc.sentences)
    if n == 0:
        return np.zeros((0, 5), dtype=np.float64)
    means = [sentence_mean_embedding(s, vocab, table)
             for s in doc.sentences]
    doc_mean = sentence_mean_embedding(
        [t for s in doc.sentences for t in s], vocab, table)

    feats = np.zeros((n, 5), dtype=np.float64)
    for i, sent in enumerate(doc.sentences):
        feats[i, 0] = len(sent)
        feats[i, 1] = i
        feats[i, 2] = sum(1 for t in sent if is_entity_marker(t))
    if n > 1:
        cohesion = np.array([sum(_cosine(means[i], means[j])
                                 for j in range(n) if j != i)
                             for i in range(n)])
        feats[:, 3] = _max_normalize(cohesion)
    feats[:, 4] = _max_normalize(
        np.array([_cosine(m, doc_mean) for m in means]))
    return feats


@dataclass
class LregModel:
    weights: np.ndarray        # (5,)
    bias: float
    mean: np.ndarray           # feature standardization, (5,)
    std: np.ndarray            # (5,), zeros replaced by 1

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": float(self.bias),
                "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LregModel":
        return cls(np.asarray(d["weights"], dtype=np.float64),
                   float(d["bias"]),
                   np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64))


def _standardize(x: np.ndarray, mean: np.ndarray,
                 std: np.ndarray) -> np.ndarray:
    return (x - mean) / std


def train_lreg(docs: list[Document], vocab: Vocabulary,
               table: EmbeddingTable, lr: float = 0.5,
               max_epochs: int = 5000, tol: float = 1e-6) -> LregModel:
    """Full-batch gradient descent on standardized features until the loss
    moves by less than `tol` between epochs. Deterministic: zero init, no
    sampling."""
    if not docs:
        raise PipelineError("no-training-data", "empty corpus")
    rows, labels = [], []
    for doc in docs:
        if doc.labels is None:
            raise PipelineError("missing-labels", f"document {doc.id}")
        feats = lreg_features(doc, vocab, table)
        rows.append(feats)
        labels.extend(doc.labels)
    x = np.concatenate(rows, axis=0)
    y = np.asarray(labels, dtype=np.float64)
    if y.min() == y.max():
        raise PipelineError("degenerate-labels",
                            "training labels are all the same class")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = _standardize(x, mean, std)

    w = np.zeros(x.shape[1], dtype=np.float64)
    b = 0.0
    prev = np.inf
    for _ in range(max_epochs):
        z = xs @ w + b
        # stable BCE: softplus(z) - y z, averaged
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        p = 1.0 / (1.0 + np.exp(-z))
        grad_w = xs.T @ (p - y) / len(y)
        grad_b = float(np.mean(p - y))
        w -= lr * grad_w
        b -= lr * grad_b
        if abs(prev - loss) < tol:
            break
        prev = loss
    return LregModel(weights=w, bias=b, mean=mean, std=std)


def predict_lreg(doc: Document, model: LregModel, vocab: Vocabulary,
                 table: EmbeddingTable) -> np.ndarray:
    """Per-sentence probabilities under the trained classifier."""
    feats = lreg_features(doc, vocab, table)
    if feats.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    z = _standardize(feats, model.mean, model.std) @ model.weights + \
        model.bias
    return 1.0 / (1.0 + np.exp(-z))


def lreg_label_accuracy(docs: list[Document], model: LregModel,
                        vocab: Vocabulary, table: EmbeddingTable,
                        threshold: float = 0.5) -> float:
    hit = total = 0
    for doc in docs:
        if doc.labels is None:
            raise PipelineError("missing-labels", f"document {doc.id}")
        probs = predict_lreg(doc, model, vocab, table)
        gold = np.asarray(doc.labels[:len(probs)])
        hit += int(((probs >= threshold).astype(int) == gold).sum())
        total += len(gold)
    return hit / max(1, total)


def lreg_summarize(doc: Document, model: LregModel, vocab: Vocabulary,
                   table: EmbeddingTable, k: int = 3,
                   limit: LimitSpec | None = None) -> dict:
    probs = predict_lreg(doc, model, vocab, table)
    idx = select_summary_sentences(probs, doc, k, limit)
    return {"id": doc.id,
            "sentence_indices": idx,
            "tokens": [t for i in idx for t in doc.sentences[i]],
            "scores": [float(p) for p in probs]}
