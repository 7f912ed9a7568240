"""ROUGE-1/2/L scoring with word/byte truncation regimes and corpus reports."""

from __future__ import annotations

import collections
import json
from dataclasses import dataclass

from extsum.errors import PipelineError


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class LimitSpec:
    kind: str = "none"       # words | bytes | none
    amount: int = 0

    def __post_init__(self):
        if self.kind not in ("words", "bytes", "none"):
            raise PipelineError("parse-error", f"limit kind {self.kind!r}")
        if self.kind != "none" and self.amount <= 0:
            raise PipelineError("parse-error",
                                f"limit {self.kind} needs a positive amount")

    @classmethod
    def parse(cls, text: str) -> "LimitSpec":
        """Accepts "none", "words:100", "bytes:75"."""
        if text == "none":
            return cls("none", 0)
        if ":" not in text:
            raise PipelineError("parse-error", f"limit {text!r}: kind:amount")
        kind, amount = text.split(":", 1)
        try:
            return cls(kind, int(amount))
        except ValueError:
            raise PipelineError("parse-error", f"limit amount {amount!r}")

    def label(self) -> str:
        return "full length" if self.kind == "none" else f"{self.amount} {self.kind}"


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def truncate(tokens: list[str], limit: LimitSpec) -> list[str]:
    """Words: first N tokens. Bytes: longest prefix whose single-space
    detokenization fits in N bytes. None: identity."""
    if limit.kind == "none":
        return list(tokens)
    if limit.kind == "words":
        return list(tokens[:limit.amount])
    out = []
    used = 0
    for tok in tokens:
        cost = len(tok.encode("utf-8")) + (1 if out else 0)
        if used + cost > limit.amount:
            break
        out.append(tok)
        used += cost
    return out


def fits(tokens: list[str], limit: LimitSpec) -> bool:
    return len(truncate(tokens, limit)) == len(tokens)


def _ngram_counts(tokens: list[str], n: int) -> collections.Counter:
    return collections.Counter(
        tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _rouge_n_single(cand: list[str], ref: list[str], n: int) -> RougeScore:
    cg = _ngram_counts(cand, n)
    rg = _ngram_counts(ref, n)
    overlap = sum(min(c, rg[g]) for g, c in cg.items())
    p = overlap / max(1, sum(cg.values())) if cg else 0.0
    r = overlap / sum(rg.values()) if rg else 0.0
    return RougeScore(p, r, _f1(p, r))


def rouge_n(candidate: list[str], references: list[list[str]],
            n: int) -> RougeScore:
    """Clipped n-gram overlap; multiple references take the max-F reference."""
    if n not in (1, 2):
        raise PipelineError("parse-error", f"rouge_n order {n}")
    if not references:
        raise PipelineError("shape-error", "rouge_n needs a reference")
    best = None
    for ref in references:
        score = _rouge_n_single(candidate, ref, n)
        if best is None or score.f1 > best.f1:
            best = score
    return best


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: list[str], references: list[list[str]]) -> RougeScore:
    if not references:
        raise PipelineError("shape-error", "rouge_l needs a reference")
    best = None
    for ref in references:
        lcs = _lcs_len(candidate, ref)
        p = lcs / len(candidate) if candidate else 0.0
        r = lcs / len(ref) if ref else 0.0
        score = RougeScore(p, r, _f1(p, r))
        if best is None or score.f1 > best.f1:
            best = score
    return best


def evaluate_corpus(system: dict[str, list[str]],
                    references: dict[str, list[list[str]]],
                    limits: list[LimitSpec]) -> dict:
    """Macro-averaged ROUGE x100 per limit; candidates are truncated,
    references are not."""
    sys_ids = set(system)
    ref_ids = set(references)
    if sys_ids != ref_ids:
        missing = sorted(ref_ids - sys_ids)
        extra = sorted(sys_ids - ref_ids)
        raise PipelineError(
            "alignment-error",
            f"missing system ids {missing[:5]}, unmatched ids {extra[:5]}")
    if not system:
        raise PipelineError("alignment-error", "no documents to evaluate")

    rows = []
    doc_ids = sorted(system)
    for limit in limits:
        sums = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
        for doc_id in doc_ids:
            cand = truncate(system[doc_id], limit)
            refs = references[doc_id]
            sums["rouge1"] += rouge_n(cand, refs, 1).f1
            sums["rouge2"] += rouge_n(cand, refs, 2).f1
            sums["rougeL"] += rouge_l(cand, refs).f1
        n = len(doc_ids)
        rows.append({"limit": limit.label(),
                     "rouge1": 100.0 * sums["rouge1"] / n,
                     "rouge2": 100.0 * sums["rouge2"] / n,
                     "rougeL": 100.0 * sums["rougeL"] / n})
    return {"documents": len(doc_ids), "rows": rows}


def format_report(report: dict) -> str:
    """Aligned plain-text table, one row per limit."""
    header = f"{'limit':<14} {'ROUGE-1':>8} {'ROUGE-2':>8} {'ROUGE-L':>8}"
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        lines.append(f"{row['limit']:<14} {row['rouge1']:>8.1f} "
                     f"{row['rouge2']:>8.1f} {row['rougeL']:>8.1f}")
    lines.append(f"({report['documents']} documents)")
    return "\n".join(lines)


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2)
