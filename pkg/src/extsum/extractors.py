"""Sentence extractor (LSTM labeler over sentence vectors with scheduled
sampling) and word extractor (hierarchical-attention decoder trained with
negative sampling, decoded with beam search, reranked log-linearly)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields

import numpy as np

from extsum import autodiff as ad
from extsum.autodiff import Tape, Tensor
from extsum.encoder import (WordEmbeddings, encode_batch, init_reader_params)
from extsum.errors import PipelineError
from extsum.optim import AdamState, adam_step, clip_global_norm
from extsum.rng import RngStream
from extsum.rouge import LimitSpec, fits, rouge_n
from extsum.textprep import (STOPWORDS, BatchLimits, Document, Vocabulary,
                             build_vocab, pad_batch, permute_entity_indices)

_LOG = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# parameters

def _init_embeddings(rng: RngStream, vocab: Vocabulary, config,
                     emb_table=None) -> Tensor:
    if emb_table is not None:
        if emb_table.matrix.shape != (len(vocab), config.word_dim):
            raise PipelineError(
                "dim-mismatch",
                f"embedding table {emb_table.matrix.shape} vs "
                f"({len(vocab)}, {config.word_dim})")
        return Tensor(emb_table.matrix.copy(), requires_grad=True)
    t = ad.uniform_tensor(rng, (len(vocab), config.word_dim),
                          config.init_range)
    t.data[vocab.pad_id] = 0.0
    return t


def init_sentence_model(rng: RngStream, vocab: Vocabulary, config,
                        emb_table=None) -> dict[str, Tensor]:
    """Reader + extractor LSTM + scoring MLP (input 2H, one tanh layer)."""
    h, f, r = config.hidden_dim, config.sent_dim, config.init_range
    params = {"embeddings": _init_embeddings(rng, vocab, config, emb_table)}
    params.update(init_reader_params(rng, config.word_dim, f, h,
                                     config.kernel_widths, r))
    params["se_lstm"] = ad.uniform_tensor(rng, (f + h, 4 * h), r)
    params["se_w1"] = ad.uniform_tensor(rng, (2 * h, h), r)
    params["se_b1"] = ad.uniform_tensor(rng, (h,), r)
    params["se_w2"] = ad.uniform_tensor(rng, (h, 1), r)
    params["se_b2"] = ad.uniform_tensor(rng, (1,), r)
    return params


def init_word_model(rng: RngStream, vocab: Vocabulary, config,
                    emb_table=None) -> dict[str, Tensor]:
    """Reader + decoder LSTM + two-level attention parameters.

    With config.attention_feedback the decoder LSTM also consumes the
    previous step's sentence-attention mix, so its input is d + H wide.
    """
    h, d, r = config.hidden_dim, config.word_dim, config.init_range
    in_dim = d + (h if config.attention_feedback else 0)
    params = {"embeddings": _init_embeddings(rng, vocab, config, emb_table)}
    params.update(init_reader_params(rng, d, config.sent_dim, h,
                                     config.kernel_widths, r))
    params["we_lstm"] = ad.uniform_tensor(rng, (in_dim + h, 4 * h), r)
    params["we_We"] = ad.uniform_tensor(rng, (h, h), r)
    params["we_Wr"] = ad.uniform_tensor(rng, (h, h), r)
    params["we_z"] = ad.uniform_tensor(rng, (h, 1), r)
    params["we_We2"] = ad.uniform_tensor(rng, (h, h), r)
    params["we_Wr2"] = ad.uniform_tensor(rng, (d, h), r)
    params["we_v"] = ad.uniform_tensor(rng, (h, 1), r)
    return params


def _require_kind(model: dict, kind: str):
    if model.get("kind") != kind:
        raise PipelineError("checkpoint-mismatch",
                            f"expected a {kind} model, got "
                            f"{model.get('kind')!r}")


# ---------------------------------------------------------------------------
# sentence extractor

@dataclass
class CurriculumSchedule:
    """Probability g(e) of feeding the gold previous label at epoch e.

    Default: linear decay from 1 to 0 over the first half of training,
    then 0 (predictions only).
    """
    total_epochs: int = 1
    constant_value: float | None = None

    def __post_init__(self):
        if self.total_epochs < 1:
            raise PipelineError("parse-error", "schedule needs >= 1 epoch")
        if self.constant_value is not None and \
                not 0.0 <= self.constant_value <= 1.0:
            raise PipelineError("invalid-probability",
                                f"g = {self.constant_value}")

    @classmethod
    def constant(cls, value: float) -> "CurriculumSchedule":
        return cls(1, value)

    def g(self, epoch: int) -> float:
        if self.constant_value is not None:
            return float(self.constant_value)
        floor = max(1, self.total_epochs // 2)
        return max(0.0, 1.0 - epoch / floor)


def extract_step(p_prev, s_prev, state, h_t: Tensor, params: dict,
                 dropout_p: float = 0.0, train: bool = False,
                 rng: RngStream | None = None):
    """One labeling step: LSTM on p_prev-scaled previous sentence vector,
    then sigmoid MLP on (extractor state : encoder state).

    p_prev of None means the start step (zero LSTM input); a float applies
    a fixed gate; a (B,1) tensor gates per document with gradient flow.
    Returns ((hbar, cbar), p_t, logit) with p_t strictly in (0,1).
    """
    if h_t.ndim != 2:
        raise PipelineError("shape-error", "encoder state must be (batch, H)")
    n_docs = h_t.shape[0]
    hidden = params["se_lstm"].shape[1] // 4
    in_dim = params["se_lstm"].shape[0] - hidden

    if state is None:
        state = (ad.zeros((n_docs, hidden)), ad.zeros((n_docs, hidden)))
    if p_prev is None or s_prev is None:
        x = ad.zeros((n_docs, in_dim))
    elif isinstance(p_prev, (int, float)):
        x = ad.scale(s_prev, float(p_prev))
    else:
        gate = p_prev if isinstance(p_prev, Tensor) else Tensor(
            np.asarray(p_prev, dtype=np.float32))
        if gate.shape != (n_docs, 1):
            raise PipelineError("shape-error",
                                f"gate shape {gate.shape} != ({n_docs}, 1)")
        x = ad.mul(gate, s_prev)
    hbar, cbar = ad.lstm_step(x, state[0], state[1], params["se_lstm"])
    if hbar.shape[0] != h_t.shape[0]:
        raise PipelineError("shape-error", "state/encoder batch mismatch")
    feat = ad.concat([hbar, h_t], axis=1)
    feat = ad.dropout(feat, dropout_p, train, rng)
    hid = ad.tanh(ad.add(ad.matmul(feat, params["se_w1"]), params["se_b1"]))
    logit = ad.add(ad.matmul(hid, params["se_w2"]), params["se_b2"])
    return (hbar, cbar), ad.sigmoid(logit), logit


def _se_forward(states, inputs, params, gold=None, g=1.0,
                rng: RngStream | None = None, dropout_p: float = 0.0,
                train: bool = False):
    """Run the extractor over encoded steps; returns (probs, logits) lists.

    With gold labels, a per-(document, step) coin decides between the gold
    previous label (probability g) and the predicted one; the mix is built
    from constant masks so gradients flow through the predicted branch.
    """
    n_docs = states[0].shape[0]
    state, p_prev = None, None
    probs, logits = [], []
    for t in range(len(states)):
        if t == 0:
            pp, sp = None, None
        elif gold is not None:
            coin = (rng.uniform(size=(n_docs, 1)) < g).astype(np.float32)
            held = Tensor(coin * gold[:, t - 1:t])
            pp = ad.add(held, ad.mul(Tensor(1.0 - coin), p_prev))
            sp = inputs[t - 1]
        else:
            pp, sp = p_prev, inputs[t - 1]
        state, p_t, logit = extract_step(pp, sp, state, states[t], params,
                                         dropout_p, train, rng)
        probs.append(p_t)
        logits.append(logit)
        p_prev = p_t
    return probs, logits


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def _batch_limits(config) -> BatchLimits:
    return BatchLimits(config.max_sentences, config.max_words)


def predict_probabilities(docs: list[Document], model: dict,
                          batch_size: int | None = None) -> list[np.ndarray]:
    """Per-sentence extraction probabilities, eval mode (predictions feed
    the gate, no dropout)."""
    _require_kind(model, "sentence-extractor")
    config, vocab, params = model["config"], model["vocab"], model["params"]
    emb = WordEmbeddings(vocab, params["embeddings"])
    out = []
    for chunk in _chunks(list(docs), batch_size or config.batch_size):
        batch = pad_batch(chunk, vocab, _batch_limits(config),
                          min_words=config.max_kernel_width)
        enc = encode_batch(batch, emb, params)
        probs, _ = _se_forward(enc.states, enc.sentence_vectors, params)
        mat = np.concatenate([p.data for p in probs], axis=1)
        for i in range(len(chunk)):
            m = int(batch.sentence_lengths[i])
            out.append(mat[i, :m].astype(np.float64))
    return out


def sentence_probabilities(doc: Document, model: dict) -> np.ndarray:
    return predict_probabilities([doc], model)[0]


def label_accuracy(docs: list[Document], model: dict) -> float:
    """Fraction of (truncated) gold sentence labels matched at threshold 0.5."""
    hit = total = 0
    for doc, probs in zip(docs, predict_probabilities(docs, model)):
        gold = np.asarray(doc.labels[:len(probs)])
        hit += int(((probs >= 0.5).astype(int) == gold).sum())
        total += len(gold)
    return hit / max(1, total)


def train_sentence_extractor(corpus: list[Document],
                             schedule: CurriculumSchedule | None,
                             config, rng: RngStream, emb_table=None,
                             model: dict | None = None,
                             adam: AdamState | None = None,
                             start_epoch: int = 0,
                             epochs: int | None = None,
                             target_accuracy: float | None = None) -> dict:
    """Minimize masked BCE over sentence labels with scheduled sampling.

    Each epoch reshuffles documents and redraws their entity indices; all
    randomness (shuffle, permutation, coins, dropout) comes from `rng`, so a
    fixed seed fixes the whole trajectory. Passing model/adam/start_epoch
    resumes mid-run. schedule None means pure teacher forcing.
    """
    docs = list(corpus)
    if not docs:
        raise PipelineError("no-training-data", "empty corpus")
    for d in docs:
        if d.labels is None:
            raise PipelineError("missing-labels", f"document {d.id}")
    schedule = schedule or CurriculumSchedule.constant(1.0)
    epochs = config.epochs if epochs is None else epochs

    if model is None:
        vocab = build_vocab(docs, config.min_count)
        params = init_sentence_model(rng, vocab, config, emb_table)
        model = {"kind": "sentence-extractor", "params": params,
                 "vocab": vocab, "config": config, "history": []}
    else:
        _require_kind(model, "sentence-extractor")
        vocab, params = model["vocab"], model["params"]
        model["config"] = config
    adam = adam or model.get("adam") or AdamState.for_params(
        params, config.lr, config.beta1, config.beta2)
    emb = WordEmbeddings(vocab, params["embeddings"])
    history = model.setdefault("history", [])

    for epoch in range(start_epoch, epochs):
        gval = float(schedule.g(epoch))
        order = rng.permutation(len(docs))
        epoch_docs = [permute_entity_indices(docs[i], rng) for i in order]
        running = 0.0
        for chunk in _chunks(epoch_docs, config.batch_size):
            batch = pad_batch(chunk, vocab, _batch_limits(config),
                              min_words=config.max_kernel_width)
            n_steps = batch.word_ids.shape[1]
            gold = np.zeros((len(chunk), n_steps), dtype=np.float32)
            for i, d in enumerate(chunk):
                lab = d.labels[:n_steps]
                gold[i, :len(lab)] = lab
            maskf = batch.sentence_mask.astype(np.float32)
            with Tape() as tape:
                enc = encode_batch(batch, emb, params, config.dropout,
                                   train=True, rng=rng)
                inputs = [ad.dropout(s, config.dropout, True, rng)
                          for s in enc.sentence_vectors]
                _, logits = _se_forward(enc.states, inputs, params, gold,
                                        gval, rng, config.dropout, True)
                terms = []
                for t, logit in enumerate(logits):
                    y = Tensor(gold[:, t:t + 1])
                    # BCE from the logit: softplus(l) - y*l, padded steps off
                    bce = ad.sub(ad.softplus(logit), ad.mul(y, logit))
                    terms.append(ad.mul(bce, Tensor(maskf[:, t:t + 1])))
                loss = ad.scale(ad.tsum(ad.concat(terms, axis=1)),
                                1.0 / len(chunk))
                tape.backward(loss)
            clip_global_norm(params, config.clip_norm)
            adam_step(params, adam)
            ad.zero_grad(params)
            running += loss.item() * len(chunk)
        acc = label_accuracy(docs, model)
        history.append({"epoch": epoch, "loss": running / len(docs),
                        "accuracy": acc, "g": gval})
        _LOG.info("se epoch %d loss %.4f acc %.3f g %.2f",
                  epoch, running / len(docs), acc, gval)
        if target_accuracy is not None and acc >= target_accuracy:
            break
    model["adam"] = adam
    return model


def select_summary_sentences(probabilities, doc: Document, k: int = 3,
                             limit: LimitSpec | None = None) -> list[int]:
    """Top-k sentences by probability (ties to the lower index), emitted in
    document order; over-limit summaries drop their lowest-probability
    sentence (ties drop the later one) until they fit."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.size == 0:
        return []
    if probs.size > len(doc.sentences):
        raise PipelineError("shape-error",
                            "more probabilities than sentences")
    limit = limit or LimitSpec("none")
    top = np.argsort(-probs, kind="stable")[:k]
    chosen = sorted(int(i) for i in top)

    def flat(sel):
        return [tok for i in sel for tok in doc.sentences[i]]

    while chosen and not fits(flat(chosen), limit):
        low = min(probs[i] for i in chosen)
        drop = max(i for i in chosen if probs[i] == low)
        chosen.remove(drop)
    return chosen


def summarize_document(doc: Document, model: dict, k: int = 3,
                       limit: LimitSpec | None = None) -> dict:
    """Extract a summary; returns scores so reports share one source."""
    probs = sentence_probabilities(doc, model)
    idx = select_summary_sentences(probs, doc, k, limit)
    return {"id": doc.id,
            "sentence_indices": idx,
            "tokens": [tok for i in idx for tok in doc.sentences[i]],
            "scores": [float(p) for p in probs]}


# ---------------------------------------------------------------------------
# word extractor

def candidate_support(doc: Document, vocab: Vocabulary,
                      include_stopwords: bool = True) -> np.ndarray:
    """Output vocabulary for one document: its own in-vocabulary words, the
    stop-word list, and the end symbol; sorted ids."""
    skip = {vocab.pad_id, vocab.unk_id, vocab.start_id}
    ids = {vocab.end_id}
    for sent in doc.sentences:
        for tok in sent:
            i = vocab.encode(tok)
            if i not in skip:
                ids.add(i)
    if include_stopwords:
        for tok in STOPWORDS:
            i = vocab.encode(tok)
            if i not in skip:
                ids.add(i)
    return np.array(sorted(ids), dtype=np.int64)


def word_attention_step(hbar, enc, word_vectors: Tensor, params: dict):
    """Sentence attention then word scoring for one decode step.

    a_j = z'tanh(We hbar + Wr h_j); b = masked softmax over real sentences;
    the b-weighted state mix scores every candidate word vector. Returns
    (probabilities, logits, sentence_attention, attended_mix).
    """
    if word_vectors.shape[0] == 0:
        raise PipelineError("empty-support", "no candidate words")
    if hbar.ndim == 1:
        hbar = ad.reshape(hbar, (1, hbar.shape[0]))
    states = [s if s.ndim == 2 else ad.reshape(s, (1, s.shape[0]))
              for s in enc.states]
    if states[0].shape[0] != 1:
        raise PipelineError("shape-error",
                            "word extractor decodes one document at a time")
    h_mat = ad.concat(states, axis=0)
    mask = None if enc.mask is None else np.asarray(enc.mask).reshape(-1)
    a = ad.matmul(ad.tanh(ad.add(ad.matmul(hbar, params["we_We"]),
                                 ad.matmul(h_mat, params["we_Wr"]))),
                  params["we_z"])
    b = ad.masked_softmax(ad.reshape(a, (a.shape[0],)), mask)
    h_tilde = ad.matmul(ad.reshape(b, (1, b.shape[0])), h_mat)
    u = ad.matmul(ad.tanh(ad.add(ad.matmul(h_tilde, params["we_We2"]),
                                 ad.matmul(word_vectors, params["we_Wr2"]))),
                  params["we_v"])
    u = ad.reshape(u, (u.shape[0],))
    return ad.masked_softmax(u), u, b, h_tilde


def _noise_weights(candidate_ids: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Corpus unigram counts ** 0.75 over the candidate support (uncounted
    symbols weigh 1)."""
    counts = np.array([float(vocab.counts.get(vocab.decode(int(i)), 1.0))
                       for i in candidate_ids])
    return counts ** 0.75


def sample_noise(weights: np.ndarray, target_position: int, k: int,
                 rng: RngStream) -> np.ndarray:
    """k distinct noise positions drawn with probability proportional to
    `weights`, never the target."""
    n = len(weights)
    if k > n - 1:
        raise PipelineError("shape-error",
                            f"{k} noise samples from support of {n}")
    w = np.asarray(weights, dtype=np.float64).copy()
    w[target_position] = 0.0
    if w.sum() <= 0.0:
        w = np.ones(n)
        w[target_position] = 0.0
    return rng.choice(n, size=k, p=w / w.sum(), replace=False)


def negative_sampling_loss(logits: Tensor, target_position: int,
                           noise_sampler, k: int = 20):
    """softplus(-u_target) + sum softplus(u_noise) over k sampled positions.

    When k reaches the support size the sampler cannot supply k distinct
    negatives, so the loss falls back to exact softmax cross-entropy (with a
    logged notice). Returns (loss, used_fallback).
    """
    n = logits.shape[0]
    if n == 0:
        raise PipelineError("empty-support", "no logits to train on")
    hot = np.zeros(n, dtype=np.float32)
    hot[target_position] = 1.0
    u_target = ad.tsum(ad.mul(logits, Tensor(hot)))
    if k >= n:
        _LOG.info("negative sampling fell back to full softmax "
                  "(k=%d, support=%d)", k, n)
        mx, _ = ad.max_over_time(logits)
        lse = ad.add(ad.log(ad.tsum(ad.exp(ad.sub(logits, mx)))), mx)
        return ad.sub(lse, u_target), True
    noise = np.asarray(noise_sampler(k), dtype=np.int64)
    if len(noise) != k or target_position in noise or \
            len(set(noise.tolist())) != k:
        raise PipelineError("shape-error", "bad noise sample")
    noise_hot = np.zeros(n, dtype=np.float32)
    noise_hot[noise] = 1.0
    noise_term = ad.tsum(ad.mul(ad.softplus(logits), Tensor(noise_hot)))
    return ad.add(ad.softplus(ad.scale(u_target, -1.0)), noise_term), False


def _we_example_loss(doc: Document, target: list[str], model: dict,
                     rng: RngStream | None, train: bool):
    """Teacher-forced sum of per-token losses for one document/target pair."""
    config, vocab, params = model["config"], model["vocab"], model["params"]
    emb = WordEmbeddings(vocab, params["embeddings"])
    drop = config.dropout if train else 0.0
    batch = pad_batch([doc], vocab, _batch_limits(config),
                      min_words=config.max_kernel_width)
    enc = encode_batch(batch, emb, params, drop, train=train, rng=rng)
    cand = candidate_support(doc, vocab)
    position = {int(t): i for i, t in enumerate(cand)}
    word_vecs = ad.gather_rows(params["embeddings"], cand)
    weights = _noise_weights(cand, vocab)

    hbar, cbar = enc.states[-1], enc.cells[-1]
    att = ad.zeros((1, params["we_We"].shape[0]))
    prev = vocab.start_id
    terms = []
    for tid in vocab.encode_sentence(target) + [vocab.end_id]:
        if tid not in position:
            raise PipelineError(
                "alignment-error",
                f"target token {vocab.decode(tid)!r} outside candidate "
                f"support of document {doc.id}")
        x = ad.dropout(ad.gather_rows(params["embeddings"],
                                      np.array([prev], dtype=np.int64)),
                       drop, train, rng)
        if config.attention_feedback:
            x = ad.concat([x, att], axis=1)
        hbar, cbar = ad.lstm_step(x, hbar, cbar, params["we_lstm"])
        _, logits, _, att = word_attention_step(hbar, enc, word_vecs, params)
        tpos = position[tid]
        loss, _ = negative_sampling_loss(
            logits, tpos, lambda k: sample_noise(weights, tpos, k, rng),
            config.noise_k)
        terms.append(ad.reshape(loss, (1,)))
        prev = tid
    return ad.tsum(ad.concat(terms, axis=0))


def train_word_extractor(corpus, config, rng: RngStream, emb_table=None,
                         model: dict | None = None,
                         adam: AdamState | None = None,
                         start_epoch: int = 0, epochs: int | None = None,
                         target_reconstruction: float | None = None) -> dict:
    """Teacher-forced training of the word extractor; gradients accumulate
    per document across a batch before one Adam step. Entity indices are
    redrawn per epoch with the target renamed to match."""
    examples = list(corpus)
    if not examples:
        raise PipelineError("no-training-data", "empty word-extraction corpus")
    epochs = config.epochs if epochs is None else epochs

    if model is None:
        vocab = build_vocab([ex.doc for ex in examples], config.min_count)
        params = init_word_model(rng, vocab, config, emb_table)
        model = {"kind": "word-extractor", "params": params, "vocab": vocab,
                 "config": config, "history": []}
    else:
        _require_kind(model, "word-extractor")
        params = model["params"]
        model["config"] = config
    adam = adam or model.get("adam") or AdamState.for_params(
        params, config.lr, config.beta1, config.beta2)
    history = model.setdefault("history", [])

    for epoch in range(start_epoch, epochs):
        order = rng.permutation(len(examples))
        running = 0.0
        for chunk in _chunks(list(order), config.batch_size):
            for i in chunk:
                ex = examples[int(i)]
                doc, rename = permute_entity_indices(ex.doc, rng,
                                                     with_mapping=True)
                target = [rename.get(t, t) for t in ex.target]
                with Tape() as tape:
                    loss = ad.scale(
                        _we_example_loss(doc, target, model, rng, True),
                        1.0 / len(chunk))
                    tape.backward(loss)
                running += loss.item() * len(chunk)
            clip_global_norm(params, config.clip_norm)
            adam_step(params, adam)
            ad.zero_grad(params)
        entry = {"epoch": epoch, "loss": running / len(examples)}
        if target_reconstruction is not None:
            entry["reconstruction"] = reconstruction_rate(examples, model)
        history.append(entry)
        _LOG.info("we epoch %d loss %.4f%s", epoch, entry["loss"],
                  f" rec {entry['reconstruction']:.2f}"
                  if "reconstruction" in entry else "")
        if target_reconstruction is not None and \
                entry["reconstruction"] >= target_reconstruction:
            break
    model["adam"] = adam
    return model


# ---------------------------------------------------------------------------
# decoding

@dataclass
class BeamHypothesis:
    ids: tuple            # emitted token ids, end symbol included when done
    logprob: float
    state: tuple          # (hbar, cbar, attended sentence mix)
    finished: bool


def _decode_setup(model: dict, doc: Document):
    _require_kind(model, "word-extractor")
    config, vocab, params = model["config"], model["vocab"], model["params"]
    emb = WordEmbeddings(vocab, params["embeddings"])
    batch = pad_batch([doc], vocab, _batch_limits(config),
                      min_words=config.max_kernel_width)
    enc = encode_batch(batch, emb, params)
    cand = candidate_support(doc, vocab)
    word_vecs = ad.gather_rows(params["embeddings"], cand)
    return enc, cand, word_vecs


def _decode_step(model: dict, enc, word_vecs, prev_id: int, state):
    """Advance the decoder one token; returns (state, log-probabilities)."""
    params = model["params"]
    x = ad.gather_rows(params["embeddings"],
                       np.array([prev_id], dtype=np.int64))
    if model["config"].attention_feedback:
        x = ad.concat([x, state[2]], axis=1)
    hbar, cbar = ad.lstm_step(x, state[0], state[1], params["we_lstm"])
    _, logits, _, att = word_attention_step(hbar, enc, word_vecs, params)
    u = logits.data.astype(np.float64)
    return (hbar, cbar, att), u - np.logaddexp.reduce(u)


def _finish(vocab: Vocabulary, ids, logprob: float, finished: bool) -> dict:
    steps = len(ids)
    out = [i for i in ids if i != vocab.end_id]
    return {"tokens": [vocab.decode(int(i)) for i in out],
            "ids": [int(i) for i in out],
            "logprob": float(logprob),
            "normalized": float(logprob) / max(1, steps),
            "finished": bool(finished)}


def greedy_decode(model: dict, doc: Document,
                  max_len: int | None = None) -> dict:
    """Argmax decoding (first index wins ties); emits only support tokens."""
    config = model["config"]
    vocab = model["vocab"]
    max_len = config.max_summary_len if max_len is None else max_len
    if max_len < 1:
        raise PipelineError("parse-error", f"summary length cap {max_len}")
    enc, cand, word_vecs = _decode_setup(model, doc)
    state = (enc.states[-1], enc.cells[-1],
             ad.zeros((1, model["params"]["we_We"].shape[0])))
    prev = vocab.start_id
    ids, logprob, finished = [], 0.0, False
    for _ in range(max_len):
        state, logp = _decode_step(model, enc, word_vecs, prev, state)
        pick = int(np.argmax(logp))
        logprob += float(logp[pick])
        tid = int(cand[pick])
        ids.append(tid)
        if tid == vocab.end_id:
            finished = True
            break
        prev = tid
    return _finish(vocab, ids, logprob, finished)


def beam_decode(model: dict, doc: Document, beam_width: int | None = None,
                max_len: int | None = None,
                n_best: int | None = None) -> list[dict]:
    """Length-bounded beam search over document words + stop-words + END.

    Pruning is by total log-probability (ties break toward lower token
    ids); the final ranking is by length-normalized log-probability.
    """
    config = model["config"]
    vocab = model["vocab"]
    width = config.beam_width if beam_width is None else beam_width
    max_len = config.max_summary_len if max_len is None else max_len
    if width < 1:
        raise PipelineError("parse-error", f"beam width {width}")
    if max_len < 1:
        raise PipelineError("parse-error", f"summary length cap {max_len}")
    enc, cand, word_vecs = _decode_setup(model, doc)
    start = BeamHypothesis(
        (), 0.0,
        (enc.states[-1], enc.cells[-1],
         ad.zeros((1, model["params"]["we_We"].shape[0]))), False)
    beams, finished = [start], []
    for _ in range(max_len):
        if not beams:
            break
        pool = []
        for hyp in beams:
            prev = hyp.ids[-1] if hyp.ids else vocab.start_id
            state, logp = _decode_step(model, enc, word_vecs, prev, hyp.state)
            for pos in np.argsort(-logp, kind="stable")[:width]:
                tid = int(cand[pos])
                pool.append(BeamHypothesis(
                    hyp.ids + (tid,), hyp.logprob + float(logp[pos]),
                    state, tid == vocab.end_id))
        pool.sort(key=lambda h: (-h.logprob, h.ids))
        beams = []
        for hyp in pool[:width]:
            (finished if hyp.finished else beams).append(hyp)
    finished.extend(beams)
    out = [_finish(vocab, h.ids, h.logprob, h.finished) for h in finished]
    out.sort(key=lambda c: (-c["normalized"], -c["logprob"],
                            tuple(c["ids"])))
    return out[:width if n_best is None else n_best]


def reconstruction_rate(examples, model: dict,
                        max_len: int | None = None) -> float:
    """Fraction of examples whose greedy decode equals the target exactly."""
    hits = 0
    for ex in examples:
        cap = max_len if max_len is not None else \
            max(model["config"].max_summary_len, len(ex.target) + 1)
        if greedy_decode(model, ex.doc, cap)["tokens"] == list(ex.target):
            hits += 1
    return hits / max(1, len(examples))


# ---------------------------------------------------------------------------
# reranking

def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def summary_features(tokens: list[str], doc: Document) -> dict[str, float]:
    """Document n-gram overlap counts (n = 1..3) plus the token length."""
    doc_tokens = [t for s in doc.sentences for t in s]
    feats = {}
    for n, name in ((1, "unigram_overlap"), (2, "bigram_overlap"),
                    (3, "trigram_overlap")):
        doc_grams = set(_ngrams(doc_tokens, n))
        feats[name] = float(sum(1 for g in _ngrams(tokens, n)
                                if g in doc_grams))
    feats["length"] = float(len(tokens))
    return feats


@dataclass
class RerankerWeights:
    unigram_overlap: float = 0.0
    bigram_overlap: float = 0.0
    trigram_overlap: float = 0.0
    length: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise PipelineError("parse-error",
                                    f"non-finite weight {f.name}")

    def feature_names(self):
        return [f.name for f in fields(self)]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RerankerWeights":
        return cls(**{k: float(v) for k, v in d.items()})


def rerank(candidates: list[dict], doc: Document | None,
           weights: RerankerWeights) -> dict:
    """Pick argmax of logprob + weighted features; ties favor the higher
    model log-probability, then the earlier candidate."""
    if not candidates:
        raise PipelineError("shape-error", "rerank needs candidates")
    best, best_key = None, None
    for idx, c in enumerate(candidates):
        feats = c.get("features")
        if feats is None:
            if doc is None:
                raise PipelineError("shape-error",
                                    "candidate has no features and no "
                                    "document was given")
            feats = summary_features(c["tokens"], doc)
        score = c["logprob"] + sum(
            getattr(weights, name) * feats[name]
            for name in weights.feature_names())
        key = (score, c["logprob"], -idx)
        if best is None or key > best_key:
            best, best_key = c, key
    return best


def decode_nbest(model: dict, docs: list[Document],
                 beam_width: int | None = None,
                 max_len: int | None = None) -> dict[str, list[dict]]:
    """Beam-decode each document and attach rank + reranker features."""
    nbest = {}
    for doc in docs:
        cands = beam_decode(model, doc, beam_width, max_len)
        for rank, c in enumerate(cands):
            c["rank"] = rank
            c["features"] = summary_features(c["tokens"], doc)
        nbest[doc.id] = cands
    return nbest


def dump_nbest(nbest: dict[str, list[dict]], path):
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(nbest):
            for c in nbest[doc_id]:
                fh.write(json.dumps({"doc_id": doc_id, "rank": c["rank"],
                                     "tokens": c["tokens"],
                                     "logprob": c["logprob"],
                                     "features": c["features"]}) + "\n")


def load_nbest(path) -> dict[str, list[dict]]:
    nbest = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise PipelineError("parse-error",
                                    f"bad n-best JSON on line {line_no}")
            nbest.setdefault(rec["doc_id"], []).append(rec)
    for cands in nbest.values():
        cands.sort(key=lambda c: c["rank"])
    return nbest


_TUNE_GRID = (-4.0, -2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0, 4.0)


def tune_rerank_weights(nbest: dict[str, list[dict]],
                        references: dict[str, list[list[str]]],
                        max_passes: int = 6,
                        grid=_TUNE_GRID) -> RerankerWeights:
    """Coordinate ascent on corpus ROUGE-2 F over candidate selections.

    Sweeps features in declaration order against a fixed value grid, keeps
    strict improvements only, and stops after a pass with no change, so the
    result never scores below the all-zero weights."""
    if not nbest:
        raise PipelineError("no-validation-data", "empty n-best list")
    missing = sorted(set(nbest) - set(references))
    if missing:
        raise PipelineError("alignment-error",
                            f"no references for {missing[:5]}")

    doc_ids = sorted(nbest)

    def objective(w: RerankerWeights) -> float:
        total = 0.0
        for doc_id in doc_ids:
            best = rerank(nbest[doc_id], None, w)
            total += rouge_n(best["tokens"], references[doc_id], 2).f1
        return total / len(doc_ids)

    weights = RerankerWeights()
    best_obj = objective(weights)
    for _ in range(max_passes):
        improved = False
        for name in weights.feature_names():
            current = getattr(weights, name)
            pick_val, pick_obj = current, best_obj
            for val in grid:
                if val == current:
                    continue
                setattr(weights, name, val)
                obj = objective(weights)
                if obj > pick_obj + 1e-12:
                    pick_val, pick_obj = val, obj
            setattr(weights, name, pick_val)
            if pick_val != current:
                improved = True
                best_obj = pick_obj
        if not improved:
            break
    return weights
