"""Tokenization, entity anonymization, vocabulary, embeddings, batching."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from extsum.errors import PipelineError
from extsum.rng import RngStream

PAD = "<pad>"
UNK = "<unk>"
SENT_START = "<s>"
SENT_END = "</s>"
NUM = "<num>"
RESERVED = (PAD, UNK, SENT_START, SENT_END)

_MARKER_RE = re.compile(r"entity\d+$")

# high-frequency words the word extractor may always emit (§-free shared list)
STOPWORDS = frozenset({
    "the", "a", "an", "and", "or", "but", "if", "of", "to", "in", "on", "at",
    "by", "for", "with", "from", "as", "is", "are", "was", "were", "be",
    "been", "being", "has", "have", "had", "he", "she", "it", "they", "we",
    "you", "i", "his", "her", "its", "their", "our", "this", "that", "these",
    "those", "not", "no", "will", "would", "can", "could", "said", "says",
    "after", "before", "when", "while", "who", "which", "what", "there",
    "than", "then", "also", "more", "most", "other", "into", "over", "up",
    "down", "out", "about", "new", "one", "two", "first", "last",
    ".", ",", "!", "?", ";", ":", "'", '"', "(", ")", "-", NUM,
})

# words that never form a one-token entity and get stripped from run edges
_FUNCTION_WORDS = {
    "the", "a", "an", "i", "he", "she", "it", "we", "they", "you", "his",
    "her", "its", "their", "our", "my", "your", "this", "that", "these",
    "those", "but", "and", "or", "nor", "so", "yet", "if", "when", "while",
    "after", "before", "on", "in", "at", "by", "for", "with", "from", "to",
    "of", "as", "is", "was", "were", "are", "be", "been", "not", "no",
    "however", "meanwhile", "also", "then", "there", "here", "yesterday",
    "today", "tomorrow", "one", "two", "some", "many", "now", "last", "new",
    "later", "earlier",
}

_DAY_MONTH = {
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday",
    "sunday", "january", "february", "march", "april", "may", "june",
    "july", "august", "september", "october", "november", "december",
}

_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "eg",
    "ie", "e.g", "i.e", "inc", "ltd", "co", "corp", "gen", "sen", "rep",
    "gov", "dept", "univ", "no", "fig", "al", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "u.k",
    "u.n", "a.m", "p.m",
}

_WORD_RE = re.compile(
    r"[A-Za-z]+(?:\.[A-Za-z]+)+\.?"      # acronyms and abbreviations: u.s., e.g.
    r"|[A-Za-z]+(?:['’\-][A-Za-z]+)*"  # words, contractions, hyphenations
    r"|\d+(?:[.,:]\d+)*%?"               # numbers with internal separators
    r"|[^\sA-Za-z0-9]"                   # any other symbol, one char at a time
)

_BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s)")
_OPENER_RE = re.compile(r"^[\"'“‘(\[]*[A-Z0-9]")


@dataclass
class EntitySpan:
    """One marker occurrence: where it sits and the tokens it replaced."""
    kind: str            # "sent" or "hl"
    sent: int
    tok: int
    marker: str
    surface: list[str]

    def to_list(self):
        return [self.kind, self.sent, self.tok, self.marker, list(self.surface)]

    @classmethod
    def from_list(cls, row):
        return cls(row[0], int(row[1]), int(row[2]), row[3], list(row[4]))


@dataclass
class Document:
    id: str
    sentences: list[list[str]]
    highlights: list[list[str]] | None = None
    labels: list[int] | None = None
    entity_map: dict[str, str] = field(default_factory=dict)
    entity_spans: list[EntitySpan] = field(default_factory=list)

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.sentences):
            raise PipelineError(
                "alignment-error",
                f"doc {self.id}: {len(self.labels)} labels for "
                f"{len(self.sentences)} sentences")

    def clone(self) -> "Document":
        return Document(
            id=self.id,
            sentences=[list(s) for s in self.sentences],
            highlights=None if self.highlights is None
            else [list(h) for h in self.highlights],
            labels=None if self.labels is None else list(self.labels),
            entity_map=dict(self.entity_map),
            entity_spans=[EntitySpan(s.kind, s.sent, s.tok, s.marker,
                                     list(s.surface))
                          for s in self.entity_spans],
        )


def is_entity_marker(token: str) -> bool:
    return bool(_MARKER_RE.fullmatch(token))


def _word_before(text: str) -> str:
    m = re.search(r"(\S+)$", text)
    if not m:
        return ""
    return m.group(1).lstrip("\"'“‘([")


def _split_line(line: str) -> list[str]:
    parts = []
    start = 0
    for m in _BOUNDARY_RE.finditer(line):
        prev = _word_before(line[:m.start()])
        core = prev.lower().rstrip(".")
        if core in _ABBREVIATIONS or re.fullmatch(r"[a-z]", core):
            continue
        rest = line[m.end():].lstrip()
        if not _OPENER_RE.match(rest):
            continue
        parts.append(line[start:m.end()])
        start = m.end()
    tail = line[start:]
    if tail.strip():
        parts.append(tail)
    return parts


def tokenize_cased(text: str) -> list[list[str]]:
    """Sentence-split and tokenize, preserving case (entity detection needs it)."""
    sentences = []
    for line in re.split(r"[\n\r]+", text):
        if not line.strip():
            continue
        for piece in _split_line(line):
            tokens = _WORD_RE.findall(piece)
            tokens = [NUM if t[0].isdigit() else t for t in tokens]
            if tokens:
                sentences.append(tokens)
    return sentences


def tokenize(text: str) -> list[list[str]]:
    """Lowercased token sequences, numbers collapsed to a shared symbol."""
    return [[t.lower() for t in sent] for sent in tokenize_cased(text)]


def lowercase_document(doc: Document) -> Document:
    """Lowercase every non-marker token in place-free fashion."""
    out = doc.clone()
    out.sentences = [[t if is_entity_marker(t) else t.lower() for t in s]
                     for s in out.sentences]
    if out.highlights is not None:
        out.highlights = [[t if is_entity_marker(t) else t.lower() for t in h]
                          for h in out.highlights]
    return out


def _capitalized(token: str) -> bool:
    return bool(token) and token[0].isupper() and any(c.isalpha() for c in token)


def _runs(sentence: list[str]):
    """Maximal runs of capitalized tokens as (start, end) pairs."""
    runs = []
    i = 0
    while i < len(sentence):
        if _capitalized(sentence[i]):
            j = i
            while j < len(sentence) and _capitalized(sentence[j]):
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


_NON_NAME = _FUNCTION_WORDS | _DAY_MONTH


def _trim_run(sentence: list[str], start: int, end: int):
    while start < end and sentence[start].lower() in _NON_NAME:
        start += 1
    while end > start and sentence[end - 1].lower() in _NON_NAME:
        end -= 1
    return start, end


def _is_subsequence(short: tuple, longer: tuple) -> bool:
    n, m = len(short), len(longer)
    if n == 0 or n > m:
        return False
    return any(tuple(longer[i:i + n]) == short for i in range(m - n + 1))


def anonymize_entities(doc: Document) -> Document:
    """Replace capitalized-run mentions with entityK markers.

    Case is the only signal, so this runs before lowercasing. Markers are
    assigned in first-mention order across sentences then highlights, and
    identical surfaces (or contiguous fragments of an earlier mention, as in
    an abbreviated later reference) share a marker. Every replacement is
    recorded so de_anonymize can restore the exact original tokens.
    """
    sequences = [("sent", doc.sentences)]
    if doc.highlights is not None:
        sequences.append(("hl", doc.highlights))

    # a lone sentence-initial capital is an entity only when the same token
    # shows up in a run that is unambiguous (mid-sentence or multi-token)
    confirmed: set[str] = set()
    for _, seqs in sequences:
        for sent in seqs:
            for start, end in _runs(sent):
                t0, t1 = _trim_run(sent, start, end)
                if t1 - t0 >= 2 or (t1 - t0 == 1 and t0 > 0):
                    confirmed.update(sent[t0:t1])

    surfaces: list[tuple] = []          # registration order = marker order
    marker_of: dict[tuple, str] = {}

    def resolve(surface: tuple) -> str:
        if surface in marker_of:
            return marker_of[surface]
        for prior in surfaces:
            if _is_subsequence(surface, prior):
                marker_of[surface] = marker_of[prior]
                return marker_of[prior]
        marker = f"entity{len(surfaces)}"
        surfaces.append(surface)
        marker_of[surface] = marker
        return marker

    out = doc.clone()
    out.entity_map = {}
    out.entity_spans = []
    for kind, seqs in [("sent", out.sentences)] + (
            [("hl", out.highlights)] if out.highlights is not None else []):
        for si, sent in enumerate(seqs):
            rebuilt = []
            pos = 0
            for start, end in _runs(sent):
                t0, t1 = _trim_run(sent, start, end)
                keep = t1 > t0
                if keep and t1 - t0 == 1 and t0 == 0 \
                        and sent[t0] not in confirmed:
                    keep = False
                if not keep:
                    continue
                rebuilt.extend(sent[pos:t0])
                surface = tuple(sent[t0:t1])
                marker = resolve(surface)
                out.entity_spans.append(
                    EntitySpan(kind, si, len(rebuilt), marker, list(surface)))
                rebuilt.append(marker)
                pos = t1
            rebuilt.extend(sent[pos:])
            seqs[si] = rebuilt

    out.entity_map = {marker_of[s]: " ".join(s) for s in surfaces}
    return out


def de_anonymize(doc: Document) -> Document:
    """Restore original surface tokens at every marker position."""
    out = doc.clone()
    by_pos = {(s.kind, s.sent, s.tok): s for s in doc.entity_spans}
    for kind, seqs in [("sent", out.sentences)] + (
            [("hl", out.highlights)] if out.highlights is not None else []):
        for si, sent in enumerate(seqs):
            rebuilt = []
            for ti, tok in enumerate(sent):
                if not is_entity_marker(tok):
                    rebuilt.append(tok)
                    continue
                span = by_pos.get((kind, si, ti))
                if span is not None:
                    rebuilt.extend(span.surface)
                elif tok in doc.entity_map:
                    rebuilt.extend(doc.entity_map[tok].split(" "))
                else:
                    raise PipelineError(
                        "alignment-error",
                        f"doc {doc.id}: marker {tok} has no surface")
            seqs[si] = rebuilt
    out.entity_map = {}
    out.entity_spans = []
    return out


def permute_entity_indices(doc: Document, rng: RngStream,
                           with_mapping: bool = False):
    """Apply a fresh bijection over this document's own markers.

    with_mapping=True also returns the old→new marker dict so callers can
    rename aligned token sequences (e.g. extraction targets) consistently.
    """
    markers = sorted({s.marker for s in doc.entity_spans}
                     | set(doc.entity_map.keys())
                     | {t for sent in doc.sentences for t in sent
                        if is_entity_marker(t)},
                     key=lambda m: int(m[len("entity"):]))
    if not markers:
        out = doc.clone()
        return (out, {}) if with_mapping else out
    perm = rng.permutation(len(markers))
    rename = {markers[i]: markers[perm[i]] for i in range(len(markers))}

    out = doc.clone()
    out.sentences = [[rename.get(t, t) for t in s] for s in out.sentences]
    if out.highlights is not None:
        out.highlights = [[rename.get(t, t) for t in h] for h in out.highlights]
    out.entity_map = {rename[m]: surf for m, surf in doc.entity_map.items()}
    for span in out.entity_spans:
        span.marker = rename[span.marker]
    return (out, rename) if with_mapping else out


@dataclass
class Vocabulary:
    token_to_index: dict[str, int]
    index_to_token: list[str]
    counts: dict[str, int]
    n_entities: int

    @classmethod
    def build(cls, corpus: list[Document], min_count: int = 1,
              entity_budget: int | None = None) -> "Vocabulary":
        counts: dict[str, int] = {}
        max_marker = -1
        for doc in corpus:
            seqs = list(doc.sentences) + list(doc.highlights or [])
            for sent in seqs:
                for tok in sent:
                    if is_entity_marker(tok):
                        max_marker = max(max_marker, int(tok[len("entity"):]))
                    else:
                        counts[tok] = counts.get(tok, 0) + 1
        n_entities = (max_marker + 1) if entity_budget is None else entity_budget
        index_to_token = list(RESERVED)
        index_to_token += [f"entity{i}" for i in range(n_entities)]
        retained = sorted((t for t, c in counts.items() if c >= min_count),
                          key=lambda t: (-counts[t], t))
        index_to_token += retained
        token_to_index = {t: i for i, t in enumerate(index_to_token)}
        return cls(token_to_index, index_to_token, counts, n_entities)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def start_id(self) -> int:
        return 2

    @property
    def end_id(self) -> int:
        return 3

    @property
    def first_word_id(self) -> int:
        return len(RESERVED) + self.n_entities

    def encode(self, token: str) -> int:
        return self.token_to_index.get(token, self.unk_id)

    def decode(self, index: int) -> str:
        return self.index_to_token[index]

    def encode_sentence(self, sentence: list[str]) -> list[int]:
        return [self.encode(t) for t in sentence]

    def to_dict(self) -> dict:
        return {"index_to_token": self.index_to_token,
                "counts": self.counts,
                "n_entities": self.n_entities}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        idx = list(d["index_to_token"])
        return cls({t: i for i, t in enumerate(idx)}, idx,
                   dict(d["counts"]), int(d["n_entities"]))


def build_vocab(corpus: list[Document], min_count: int = 1,
                entity_budget: int | None = None) -> Vocabulary:
    return Vocabulary.build(corpus, min_count, entity_budget)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray            # |V| x d, float32
    pretrained: np.ndarray        # bool per row
    coverage: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_embeddings(path: str, vocab: Vocabulary, dim: int = 150,
                    rng: RngStream | None = None) -> EmbeddingTable:
    """Text format: one line per word, token then `dim` reals."""
    rng = rng or RngStream(0)
    matrix = rng.uniform(-0.05, 0.05,
                         size=(len(vocab), dim)).astype(np.float32)
    matrix[vocab.pad_id] = 0.0
    pretrained = np.zeros(len(vocab), dtype=bool)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise PipelineError(
                    "dim-mismatch",
                    f"line {lineno}: {len(values)} values, expected {dim}")
            try:
                row = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError:
                raise PipelineError("parse-error",
                                    f"line {lineno}: non-numeric value")
            if token in vocab:
                i = vocab.encode(token)
                matrix[i] = row
                pretrained[i] = True
    n_words = len(vocab) - vocab.first_word_id
    coverage = float(pretrained[vocab.first_word_id:].sum()) / max(1, n_words)
    return EmbeddingTable(matrix, pretrained, coverage)


@dataclass
class BatchLimits:
    max_sentences: int = 30
    max_words: int = 50


@dataclass
class Batch:
    word_ids: np.ndarray        # B x S x W int32, PAD in masked slots
    sentence_mask: np.ndarray   # B x S bool
    word_mask: np.ndarray       # B x S x W bool
    sentence_lengths: np.ndarray
    word_lengths: np.ndarray    # B x S
    doc_ids: list[str]

    @property
    def size(self) -> int:
        return self.word_ids.shape[0]


def pad_batch(docs: list[Document], vocab: Vocabulary,
              limits: BatchLimits | None = None,
              min_words: int = 7) -> Batch:
    """Encode and pad a batch; `min_words` keeps rows at least one kernel wide."""
    if not docs:
        raise PipelineError("shape-error", "empty batch")
    limits = limits or BatchLimits()
    clipped = [[s[:limits.max_words] for s in d.sentences[:limits.max_sentences]]
               for d in docs]
    n_sent = max(len(d) for d in clipped)
    n_word = max((len(s) for d in clipped for s in d), default=0)
    n_word = max(n_word, min_words)

    b = len(docs)
    word_ids = np.full((b, n_sent, n_word), vocab.pad_id, dtype=np.int32)
    word_mask = np.zeros((b, n_sent, n_word), dtype=bool)
    sentence_mask = np.zeros((b, n_sent), dtype=bool)
    sentence_lengths = np.zeros(b, dtype=np.int64)
    word_lengths = np.zeros((b, n_sent), dtype=np.int64)
    for i, sents in enumerate(clipped):
        sentence_lengths[i] = len(sents)
        for j, sent in enumerate(sents):
            sentence_mask[i, j] = True
            word_lengths[i, j] = len(sent)
            ids = vocab.encode_sentence(sent)
            word_ids[i, j, :len(ids)] = ids
            word_mask[i, j, :len(ids)] = True
    return Batch(word_ids, sentence_mask, word_mask,
                 sentence_lengths, word_lengths, [d.id for d in docs])


def prepare_document(doc_id: str, text: str, highlight_text: str | None = None,
                     anonymize: bool = True) -> Document:
    """Raw text to a training-ready document: case-aware tokenize,
    entity anonymization, then lowercasing of everything else."""
    doc = Document(id=doc_id, sentences=tokenize_cased(text),
                   highlights=(tokenize_cased(highlight_text)
                               if highlight_text is not None else None))
    if anonymize:
        doc = anonymize_entities(doc)
    return lowercase_document(doc)


def document_to_record(doc: Document) -> dict:
    rec = {"id": doc.id, "sentences": doc.sentences}
    if doc.highlights is not None:
        rec["highlights"] = doc.highlights
    if doc.labels is not None:
        rec["labels"] = doc.labels
    if doc.entity_map or doc.entity_spans:
        rec["entities"] = {
            "map": doc.entity_map,
            "spans": [s.to_list() for s in doc.entity_spans]}
    return rec


def document_from_record(rec: dict, where: str = "record") -> Document:
    if "id" not in rec or "sentences" not in rec:
        raise PipelineError("parse-error",
                            f"{where}: missing id or sentences")
    ent = rec.get("entities") or {}
    return Document(
        id=str(rec["id"]),
        sentences=[list(map(str, s)) for s in rec["sentences"]],
        highlights=([list(map(str, h)) for h in rec["highlights"]]
                    if rec.get("highlights") is not None else None),
        labels=(list(map(int, rec["labels"]))
                if rec.get("labels") is not None else None),
        entity_map=dict(ent.get("map", {})),
        entity_spans=[EntitySpan.from_list(r)
                      for r in ent.get("spans", [])],
    )


def save_corpus(docs: list[Document], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc)) + "\n")


def load_corpus(path: str) -> list[Document]:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise PipelineError("parse-error", f"line {lineno}: bad JSON")
            docs.append(document_from_record(rec, f"line {lineno}"))
    return docs
