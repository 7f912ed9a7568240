"""Static reports: per-sentence attention heat maps (text, HTML, PNG) and
score-table figures for evaluation output. Scores always come from the same
forward pass the summarizer uses, so reports and summaries cannot drift."""

from __future__ import annotations

import html
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from extsum.extractors import summarize_document  # noqa: E402
from extsum.textprep import Document  # noqa: E402

_SHADE_CHARS = " ░▒▓█"


def shade_level(score: float, levels: int = 5) -> int:
    """Bucket a probability into `levels` shades; 0 maps to 0, 1 to top."""
    score = min(1.0, max(0.0, float(score)))
    return min(levels - 1, int(score * levels))


def attention_report(doc: Document, model: dict, k: int = 3,
                     limit=None) -> dict:
    """Summary plus per-sentence scores and shade buckets for one document."""
    summary = summarize_document(doc, model, k, limit)
    scores = summary["scores"]
    return {
        "id": doc.id,
        "scores": scores,
        "shades": [shade_level(s) for s in scores],
        "selected": summary["sentence_indices"],
        "sentences": [list(s) for s in doc.sentences],
        "summary_tokens": summary["tokens"],
    }


def render_attention_text(report: dict) -> str:
    lines = [f"document {report['id']}"]
    for i, (sent, score, shade) in enumerate(zip(
            report["sentences"], report["scores"], report["shades"])):
        bar = _SHADE_CHARS[shade] * 8
        mark = "*" if i in report["selected"] else " "
        lines.append(f"{mark} {i:3d} [{bar}] {score:.4f} {' '.join(sent)}")
    return "\n".join(lines) + "\n"


def render_attention_html(report: dict) -> str:
    rows = []
    for i, (sent, score) in enumerate(zip(report["sentences"],
                                          report["scores"])):
        alpha = min(1.0, max(0.0, float(score)))
        star = "*" if i in report["selected"] else ""
        rows.append(
            f'<tr><td>{star}{i}</td>'
            f'<td style="background-color: rgba(200, 40, 40, {alpha:.4f})">'
            f'{html.escape(" ".join(sent))}</td>'
            f'<td>{score:.4f}</td></tr>')
    return ("<html><body>\n"
            f"<h3>document {html.escape(report['id'])}</h3>\n"
            '<table border="0">\n' + "\n".join(rows) +
            "\n</table></body></html>\n")


def render_attention_figure(report: dict, path) -> None:
    """Horizontal bar chart of the per-sentence scores."""
    scores = np.asarray(report["scores"], dtype=float)
    n = max(1, len(scores))
    fig, ax = plt.subplots(figsize=(6, 0.4 * n + 1))
    ys = np.arange(len(scores))
    colors = ["tab:red" if i in report["selected"] else "tab:gray"
              for i in ys]
    ax.barh(ys, scores, color=colors)
    ax.set_yticks(ys)
    ax.set_yticklabels([f"s{i}" for i in ys])
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("extraction probability")
    ax.set_title(f"document {report['id']}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_attention_report(base_path, doc: Document, model: dict, k: int = 3,
                          limit=None) -> dict:
    """Write <base>.txt, <base>.html, and <base>.png; returns the file map."""
    report = attention_report(doc, model, k, limit)
    base = str(base_path)
    paths = {"text": base + ".txt", "html": base + ".html",
             "figure": base + ".png"}
    with open(paths["text"], "w", encoding="utf-8") as fh:
        fh.write(render_attention_text(report))
    with open(paths["html"], "w", encoding="utf-8") as fh:
        fh.write(render_attention_html(report))
    render_attention_figure(report, paths["figure"])
    return {"report": report, "paths": paths}


def render_rouge_figure(report: dict, path) -> None:
    """Grouped bars: ROUGE-1/2/L per evaluation limit row."""
    rows = report["rows"]
    labels = [r["limit"] for r in rows]
    metrics = ("rouge1", "rouge2", "rougeL")
    xs = np.arange(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.8 * len(rows) + 3, 4))
    for off, metric in enumerate(metrics):
        vals = [float(r[metric]) for r in rows]
        ax.bar(xs + (off - 1) * width, vals, width, label=metric)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_ylabel("F1 (x100)")
    ax.set_title(f"{report['documents']} documents")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_rouge_report(base_path, report: dict, text: str) -> dict:
    """Write <base>.json, <base>.txt, and <base>.png for a score report."""
    base = str(base_path)
    paths = {"json": base + ".json", "text": base + ".txt",
             "figure": base + ".png"}
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["text"], "w", encoding="utf-8") as fh:
        fh.write(text)
    render_rouge_figure(report, paths["figure"])
    return paths
