import json

import numpy as np
import pytest

from extsum.config import RunConfig
from extsum.datagen import generate_fixture_corpus
from extsum.errors import PipelineError
from extsum.extractors import (CurriculumSchedule, init_sentence_model,
                               summarize_document, train_sentence_extractor)
from extsum.report import (attention_report, render_attention_figure,
                           render_attention_html, render_attention_text,
                           render_rouge_figure, save_attention_report,
                           save_rouge_report, shade_level)
from extsum.rng import RngStream
from extsum.textprep import Document, build_vocab

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def tiny_config(**over):
    base = dict(word_dim=8, sent_dim=10, hidden_dim=8, kernel_widths=(1, 2),
                lr=0.01, beta1=0.9, beta2=0.999, batch_size=4, dropout=0.0,
                init_range=0.1, noise_k=3, top_k=3, epochs=2, min_count=1,
                max_sentences=12, max_words=14, beam_width=3,
                max_summary_len=8, clip_norm=5.0, seed=13)
    base.update(over)
    return RunConfig(**base)


def plain_doc(tokens_per_sentence, doc_id="d0", labels=None):
    return Document(id=doc_id,
                    sentences=[list(s) for s in tokens_per_sentence],
                    labels=labels)


def zeroed_model(docs, config):
    """Sentence extractor whose every parameter is exactly zero, so all
    extraction probabilities sit at 0.5."""
    vocab = build_vocab(docs, config.min_count)
    params = init_sentence_model(RngStream(0), vocab, config)
    for tensor in params.values():
        tensor.data[...] = 0.0
    return {"kind": "sentence-extractor", "params": params, "vocab": vocab,
            "config": config}


@pytest.fixture(scope="module")
def overfit_model():
    docs = generate_fixture_corpus(RngStream(8), 8)
    cfg = tiny_config(word_dim=10, sent_dim=12, hidden_dim=12, epochs=60)
    model = train_sentence_extractor(docs, CurriculumSchedule(60), cfg,
                                     RngStream(2), target_accuracy=1.0)
    assert model["history"][-1]["accuracy"] == 1.0
    return docs, model


class TestShadeLevel:
    def test_endpoints_and_clamping(self):
        assert shade_level(0.0) == 0
        assert shade_level(1.0) == 4
        assert shade_level(-3.0) == 0
        assert shade_level(7.0) == 4

    def test_monotone(self):
        scores = np.linspace(0, 1, 101)
        levels = [shade_level(s) for s in scores]
        assert all(a <= b for a, b in zip(levels, levels[1:]))
        assert set(levels) == {0, 1, 2, 3, 4}

    def test_custom_levels(self):
        assert shade_level(0.49, levels=2) == 0
        assert shade_level(0.51, levels=2) == 1


class TestAttentionReport:
    def docs(self):
        return [plain_doc([["the", "cat", "sat"], ["a", "dog", "ran"],
                           ["the", "end", "came"], ["more", "words", "here"]],
                          labels=[1, 0, 1, 0])]

    def test_uniform_model_uniform_shading(self):
        # all-zero parameters: every sentence scores exactly 0.5, so every
        # shade bucket must agree
        docs = self.docs()
        model = zeroed_model(docs, tiny_config())
        report = attention_report(docs[0], model)
        assert report["scores"] == [0.5] * 4
        assert len(set(report["shades"])) == 1

    def test_scores_match_summarizer_exactly(self, overfit_model):
        docs, model = overfit_model
        for doc in docs[:3]:
            report = attention_report(doc, model)
            summary = summarize_document(doc, model)
            assert report["scores"] == summary["scores"]
            assert report["selected"] == summary["sentence_indices"]
            assert report["summary_tokens"] == summary["tokens"]

    def test_gold_positive_sentences_are_darkest(self, overfit_model):
        # at label accuracy 1.0 the positives all clear 0.5 and the negatives
        # sit below it, so the top-shaded sentence must be a gold positive
        docs, model = overfit_model
        for doc in docs:
            report = attention_report(doc, model)
            scores = report["scores"]
            gold = doc.labels[:len(scores)]
            pos = [s for s, g in zip(scores, gold) if g == 1]
            neg = [s for s, g in zip(scores, gold) if g == 0]
            if pos and neg:
                assert min(pos) > max(neg)
            best = int(np.argmax(scores))
            assert gold[best] == 1
            assert report["shades"][best] == max(report["shades"])

    def test_selected_follow_top_k(self):
        docs = self.docs()
        model = zeroed_model(docs, tiny_config())
        # uniform scores tie; selection should fall back to lowest indexes
        report = attention_report(docs[0], model, k=2)
        assert report["selected"] == [0, 1]

    def test_wrong_model_kind(self):
        doc = self.docs()[0]
        with pytest.raises(PipelineError) as e:
            attention_report(doc, {"kind": "word-extractor"})
        assert e.value.code == "checkpoint-mismatch"


class TestRenderers:
    def report(self):
        return {"id": "d7",
                "scores": [0.9, 0.1, 0.5],
                "shades": [4, 0, 2],
                "selected": [0, 2],
                "sentences": [["big", "news"], ["quiet", "<b>line</b>"],
                              ["middle", "one"]],
                "summary_tokens": ["big", "news", "middle", "one"]}

    def test_text_layout(self):
        text = render_attention_text(self.report())
        lines = text.strip().split("\n")
        assert lines[0] == "document d7"
        assert len(lines) == 4
        assert lines[1].startswith("*")
        assert lines[2].startswith(" ")
        assert lines[3].startswith("*")
        assert "█" * 8 in lines[1]
        assert "0.9000" in lines[1]
        assert "big news" in lines[1]

    def test_html_escapes_tokens(self):
        html_text = render_attention_html(self.report())
        assert "&lt;b&gt;line&lt;/b&gt;" in html_text
        assert "<b>line</b>" not in html_text
        assert "rgba(200, 40, 40, 0.9000)" in html_text

    def test_figure_writes_png(self, tmp_path):
        path = tmp_path / "att.png"
        render_attention_figure(self.report(), path)
        data = path.read_bytes()
        assert data.startswith(PNG_MAGIC)
        assert len(data) > 1000


class TestSaveAttentionReport:
    def test_writes_all_three_files(self, tmp_path, overfit_model):
        docs, model = overfit_model
        out = save_attention_report(tmp_path / "doc0", docs[0], model)
        assert sorted(out["paths"]) == ["figure", "html", "text"]
        text = open(out["paths"]["text"], encoding="utf-8").read()
        assert text.startswith(f"document {docs[0].id}")
        html_text = open(out["paths"]["html"], encoding="utf-8").read()
        assert "<table" in html_text
        png = open(out["paths"]["figure"], "rb").read()
        assert png.startswith(PNG_MAGIC)

    def test_report_round_trip_matches_direct_call(self, tmp_path,
                                                   overfit_model):
        docs, model = overfit_model
        out = save_attention_report(tmp_path / "doc1", docs[1], model)
        assert out["report"] == attention_report(docs[1], model)


class TestRougeFigure:
    def report(self):
        return {"documents": 3,
                "rows": [
                    {"limit": "full", "rouge1": 41.2, "rouge2": 17.3,
                     "rougeL": 36.0},
                    {"limit": "75 bytes", "rouge1": 22.4, "rouge2": 8.1,
                     "rougeL": 19.9},
                ]}

    def test_figure_writes_png(self, tmp_path):
        path = tmp_path / "scores.png"
        render_rouge_figure(self.report(), path)
        assert path.read_bytes().startswith(PNG_MAGIC)

    def test_save_rouge_report(self, tmp_path):
        report = self.report()
        paths = save_rouge_report(tmp_path / "eval", report, "table text\n")
        with open(paths["json"], encoding="utf-8") as fh:
            assert json.load(fh) == report
        assert open(paths["text"], encoding="utf-8").read() == "table text\n"
        assert open(paths["figure"], "rb").read().startswith(PNG_MAGIC)
