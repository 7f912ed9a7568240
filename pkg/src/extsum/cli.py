"""Command-line pipeline: fixture generation, dataset construction, training
with checkpoint/resume, summarization, ROUGE evaluation, and attention
reports. Configuration comes from a key=value file plus --set overrides;
overrides win. Exit status 2 marks usage errors, 1 marks pipeline errors."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from extsum.baselines import lead3, lreg_summarize, train_lreg
from extsum.checkpoint import load_checkpoint, save_checkpoint
from extsum.config import load_config
from extsum.datagen import (DEFAULT_RULE_WEIGHTS, LabelRuleWeights,
                            build_word_extraction_corpus,
                            generate_fixture_corpus, label_document,
                            load_word_corpus, name_key_fixture_corpus,
                            save_word_corpus)
from extsum.errors import PipelineError
from extsum.extractors import (CurriculumSchedule, RerankerWeights,
                               beam_decode, decode_nbest, greedy_decode,
                               rerank, summarize_document,
                               train_sentence_extractor,
                               train_word_extractor, tune_rerank_weights)
from extsum.report import save_attention_report, save_rouge_report
from extsum.rng import RngStream
from extsum.rouge import (LimitSpec, evaluate_corpus, format_report,
                          truncate)
from extsum.textprep import (EmbeddingTable, build_vocab, load_corpus,
                             load_embeddings, save_corpus)

log = logging.getLogger("extsum.cli")


# ---------------------------------------------------------------------------
# shared plumbing

def _config(args):
    return load_config(getattr(args, "config", None),
                       getattr(args, "set", None))


def _limits(args) -> list[LimitSpec]:
    if not getattr(args, "limit", None):
        return [LimitSpec("none", 0)]
    return [LimitSpec.parse(s) for s in args.limit]


def _require_kind(model: dict, kind: str):
    if model.get("kind") != kind:
        raise PipelineError("checkpoint-mismatch",
                            f"expected a {kind} model, got "
                            f"{model.get('kind')!r}")


def _references(docs) -> dict[str, list[list[str]]]:
    """One reference per document: its highlight sentences joined in order."""
    refs = {}
    for doc in docs:
        if doc.highlights is None:
            raise PipelineError("missing-labels",
                                f"document {doc.id} has no highlights")
        refs[doc.id] = [[t for h in doc.highlights for t in h]]
    return refs


def _random_table(vocab, dim: int, rng: RngStream) -> EmbeddingTable:
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim)).astype(
        np.float32)
    matrix[vocab.pad_id] = 0.0
    return EmbeddingTable(matrix, np.zeros(len(vocab), dtype=bool), 0.0)


def _embedding_table(args, docs, config):
    if not getattr(args, "embeddings", None):
        return None
    vocab = build_vocab(docs, config.min_count)
    return load_embeddings(args.embeddings, vocab, config.word_dim,
                           RngStream(config.seed))


def _write_jsonl(path: str | None, rows: list[dict]) -> None:
    out = sys.stdout if path in (None, "-") else open(path, "w",
                                                      encoding="utf-8")
    try:
        for row in rows:
            out.write(json.dumps(row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def _load_summaries(path: str) -> dict[str, list[str]]:
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise PipelineError("parse-error",
                                    f"{path}:{lineno}: bad JSON")
            if "id" not in rec or "tokens" not in rec:
                raise PipelineError("parse-error",
                                    f"{path}:{lineno}: missing id or tokens")
            table[str(rec["id"])] = [str(t) for t in rec["tokens"]]
    return table


def _load_reference_sets(path: str) -> dict[str, list[list[str]]]:
    """Reference lines carry either a single `tokens` list or a `refs` list
    of token lists for multi-reference scoring."""
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise PipelineError("parse-error",
                                    f"{path}:{lineno}: bad JSON")
            if "id" not in rec:
                raise PipelineError("parse-error",
                                    f"{path}:{lineno}: missing id")
            if "refs" in rec:
                table[str(rec["id"])] = [[str(t) for t in r]
                                         for r in rec["refs"]]
            elif "tokens" in rec:
                table[str(rec["id"])] = [[str(t) for t in rec["tokens"]]]
            else:
                raise PipelineError(
                    "parse-error", f"{path}:{lineno}: missing tokens or refs")
    return table


def _resume_state(args):
    """(model, rng, config, start_epoch) for fresh or resumed training."""
    if getattr(args, "resume", None):
        model, rng = load_checkpoint(args.resume)
        # explicit flags trump the stored config on resume
        config = (_config(args) if (args.config or args.set)
                  else model["config"])
        start = model["history"][-1]["epoch"] + 1 if model["history"] else 0
        return model, rng, config, start
    config = _config(args)
    return None, RngStream(config.seed), config, 0


def _save_points(start: int, total: int, every: int | None) -> list[int]:
    if total <= start:
        return [total]
    if not every:
        return [total]
    points = list(range(start + every, total, every)) + [total]
    return points


def _word_summary(model, doc, args) -> list[str]:
    weights = None
    if getattr(args, "reranker", None):
        with open(args.reranker, "r", encoding="utf-8") as fh:
            weights = RerankerWeights.from_dict(json.load(fh))
    if getattr(args, "greedy", False):
        return greedy_decode(model, doc, args.max_len)["tokens"]
    cands = beam_decode(model, doc, args.beam, args.max_len)
    if weights is not None:
        return rerank(cands, doc, weights)["tokens"]
    return cands[0]["tokens"]


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_fixture(args) -> int:
    rng = RngStream(args.seed)
    make = (name_key_fixture_corpus if args.style == "names"
            else generate_fixture_corpus)
    docs = make(rng, args.docs, positive_rate=args.positive_rate)
    save_corpus(docs, args.out)
    print(f"wrote {len(docs)} documents to {args.out}")
    return 0


def cmd_make_dataset(args) -> int:
    config = _config(args)
    docs = load_corpus(args.input)
    if args.rule_weights:
        with open(args.rule_weights, "r", encoding="utf-8") as fh:
            weights = LabelRuleWeights(**json.load(fh))
    else:
        weights = DEFAULT_RULE_WEIGHTS

    if args.mode == "sentence":
        labeled, n_pos, n_sent = [], 0, 0
        for doc in docs:
            if doc.highlights is None:
                raise PipelineError("missing-labels",
                                    f"document {doc.id} has no highlights")
            out = doc.clone()
            out.labels = label_document(doc, doc.highlights, weights)
            n_pos += sum(out.labels)
            n_sent += len(out.labels)
            labeled.append(out)
        save_corpus(labeled, args.out)
        report = {"mode": "sentence", "documents": len(labeled),
                  "sentences": n_sent,
                  "positive_rate": n_pos / max(1, n_sent),
                  "rule_weights": dataclasses.asdict(weights)}
        print(f"labeled {len(labeled)} documents "
              f"(positive rate {report['positive_rate']:.3f})")
    else:
        vocab = build_vocab(docs, config.min_count)
        table = (load_embeddings(args.embeddings, vocab, config.word_dim,
                                 RngStream(config.seed))
                 if args.embeddings
                 else _random_table(vocab, config.word_dim,
                                    RngStream(config.seed)))
        examples, report = build_word_extraction_corpus(
            docs, table, vocab, config.oov_k, config.oov_tau)
        report = {"mode": "word", **report}
        save_word_corpus(examples, args.out)
        print(f"kept {report['accepted']}/{report['documents']} documents "
              f"(acceptance rate {report['acceptance_rate']:.3f})")

    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_train_se(args) -> int:
    model, rng, config, start = _resume_state(args)
    docs = load_corpus(args.corpus)
    horizon = args.curriculum or config.epochs
    schedule = None if args.no_curriculum else CurriculumSchedule(horizon)
    emb = _embedding_table(args, docs, config) if model is None else None
    for end in _save_points(start, config.epochs, args.save_every):
        model = train_sentence_extractor(
            docs, schedule, config, rng, emb_table=emb, model=model,
            start_epoch=start, epochs=end,
            target_accuracy=args.target_accuracy)
        done = model["history"][-1]["epoch"] + 1 if model["history"] else end
        save_checkpoint(args.out, model, rng, epoch=done - 1)
        start = done
        if done < end:  # early stop hit inside the chunk
            break
    last = model["history"][-1] if model["history"] else {}
    print(f"saved {args.out} after epoch {start - 1} "
          f"(loss {last.get('loss', float('nan')):.4f}, "
          f"accuracy {last.get('accuracy', float('nan')):.3f})")
    return 0


def cmd_train_we(args) -> int:
    model, rng, config, start = _resume_state(args)
    examples = load_word_corpus(args.examples)
    emb = (_embedding_table(args, [ex.doc for ex in examples], config)
           if model is None else None)
    for end in _save_points(start, config.epochs, args.save_every):
        model = train_word_extractor(
            examples, config, rng, emb_table=emb, model=model,
            start_epoch=start, epochs=end,
            target_reconstruction=args.target_reconstruction)
        done = model["history"][-1]["epoch"] + 1 if model["history"] else end
        save_checkpoint(args.out, model, rng, epoch=done - 1)
        start = done
        if done < end:
            break
    last = model["history"][-1] if model["history"] else {}
    extra = (f", reconstruction {last['reconstruction']:.3f}"
             if "reconstruction" in last else "")
    print(f"saved {args.out} after epoch {start - 1} "
          f"(loss {last.get('loss', float('nan')):.4f}{extra})")
    return 0


def cmd_summarize(args) -> int:
    model, _ = load_checkpoint(args.model)
    docs = load_corpus(args.input)
    limit = LimitSpec.parse(args.limit) if args.limit else None
    rows = []
    if model["kind"] == "sentence-extractor":
        k = args.k or model["config"].top_k
        for doc in docs:
            s = summarize_document(doc, model, k, limit)
            row = {"id": s["id"], "tokens": s["tokens"]}
            if args.dump_scores:
                row["scores"] = s["scores"]
            rows.append(row)
    else:
        _require_kind(model, "word-extractor")
        if args.dump_scores:
            raise PipelineError(
                "checkpoint-mismatch",
                "--dump-scores reports sentence extraction probabilities")
        for doc in docs:
            tokens = _word_summary(model, doc, args)
            if limit is not None:
                tokens = truncate(tokens, limit)
            rows.append({"id": doc.id, "tokens": tokens})
    _write_jsonl(args.out, rows)
    if args.out not in (None, "-"):
        print(f"wrote {len(rows)} summaries to {args.out}")
    return 0


def _system_summaries(args, docs) -> dict[str, list[str]]:
    if args.model:
        model, _ = load_checkpoint(args.model)
        if model["kind"] == "sentence-extractor":
            k = args.k or model["config"].top_k
            return {d.id: summarize_document(d, model, k)["tokens"]
                    for d in docs}
        _require_kind(model, "word-extractor")
        return {d.id: _word_summary(model, d, args) for d in docs}
    if args.baseline == "lead3":
        return {d.id: lead3(d, args.k or 3)["tokens"] for d in docs}
    # logistic-regression baseline, trained in-process
    train_docs = load_corpus(args.train_corpus) if args.train_corpus else docs
    vocab = build_vocab(train_docs, 1)
    table = (load_embeddings(args.embeddings, vocab, args.dim,
                             RngStream(args.seed))
             if args.embeddings
             else _random_table(vocab, args.dim, RngStream(args.seed)))
    lreg = train_lreg(train_docs, vocab, table)
    return {d.id: lreg_summarize(d, lreg, vocab, table, args.k or 3)["tokens"]
            for d in docs}


def cmd_evaluate(args) -> int:
    docs = load_corpus(args.corpus)
    system = _system_summaries(args, docs)
    report = evaluate_corpus(system, _references(docs), _limits(args))
    text = format_report(report)
    print(text)
    if args.out:
        paths = save_rouge_report(args.out, report, text + "\n")
        print(f"wrote {paths['json']}, {paths['text']}, {paths['figure']}")
    return 0


def cmd_rouge(args) -> int:
    system = _load_summaries(args.sys)
    references = _load_reference_sets(args.ref)
    report = evaluate_corpus(system, references, _limits(args))
    text = format_report(report)
    print(text)
    if args.out:
        paths = save_rouge_report(args.out, report, text + "\n")
        print(f"wrote {paths['json']}, {paths['text']}, {paths['figure']}")
    return 0


def cmd_report_attention(args) -> int:
    model, _ = load_checkpoint(args.model)
    docs = load_corpus(args.input)
    if args.ids:
        wanted = [s for s in args.ids.split(",") if s]
        by_id = {d.id: d for d in docs}
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise PipelineError("alignment-error",
                                f"unknown document ids {missing}")
        docs = [by_id[w] for w in wanted]
    os.makedirs(args.out_dir, exist_ok=True)
    limit = LimitSpec.parse(args.limit) if args.limit else None
    k = args.k or model["config"].top_k
    for doc in docs:
        base = os.path.join(args.out_dir, doc.id.replace(os.sep, "_"))
        out = save_attention_report(base, doc, model, k, limit)
        print(f"wrote {out['paths']['text']}, {out['paths']['html']}, "
              f"{out['paths']['figure']}")
    return 0


def cmd_tune_reranker(args) -> int:
    model, _ = load_checkpoint(args.model)
    _require_kind(model, "word-extractor")
    docs = load_corpus(args.corpus)
    nbest = decode_nbest(model, docs, args.beam, args.max_len)
    weights = tune_rerank_weights(nbest, _references(docs))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(weights.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}: {weights.as_dict()}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_config_flags(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override; wins over --config (repeatable)")


def _add_train_flags(p):
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--embeddings", help="pretrained embedding text file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--save-every", type=int, default=0, metavar="N",
                   help="also save every N epochs (default: final only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extsum",
        description="Extractive summarization pipeline: data construction, "
                    "training, summarization, and evaluation.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixture", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=32)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--positive-rate", type=float, default=0.3)
    p.add_argument("--style", choices=("markers", "names"),
                   default="markers",
                   help="entity markers or plain surface names")
    p.set_defaults(func=cmd_gen_fixture)

    p = sub.add_parser("make-dataset",
                       help="label sentences or build word-extraction pairs")
    _add_config_flags(p)
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("sentence", "word"),
                   default="sentence")
    p.add_argument("--report", help="construction report JSON path")
    p.add_argument("--rule-weights", help="labeling rule weights JSON")
    p.add_argument("--embeddings",
                   help="embedding file for neighbor substitution")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train-se", help="train the sentence extractor")
    _add_train_flags(p)
    p.add_argument("--corpus", required=True, help="labeled corpus JSONL")
    p.add_argument("--curriculum", type=int, metavar="EPOCHS",
                   help="scheduled-sampling horizon (default: total epochs)")
    p.add_argument("--no-curriculum", action="store_true",
                   help="pure teacher forcing")
    p.add_argument("--target-accuracy", type=float,
                   help="stop once training label accuracy reaches this")
    p.set_defaults(func=cmd_train_se)

    p = sub.add_parser("train-we", help="train the word extractor")
    _add_train_flags(p)
    p.add_argument("--examples", required=True,
                   help="word-extraction corpus JSONL")
    p.add_argument("--target-reconstruction", type=float,
                   help="stop once greedy reconstruction reaches this")
    p.set_defaults(func=cmd_train_we)

    p = sub.add_parser("summarize", help="summarize a corpus with a model")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--out", help="summaries JSONL (default: stdout)")
    p.add_argument("--limit", help="words:N | bytes:N | none")
    p.add_argument("--k", type=int, help="sentences per summary")
    p.add_argument("--dump-scores", action="store_true",
                   help="include per-sentence probabilities")
    p.add_argument("--beam", type=int, help="beam width (word models)")
    p.add_argument("--max-len", type=int, help="summary token cap")
    p.add_argument("--greedy", action="store_true",
                   help="greedy decoding (word models)")
    p.add_argument("--reranker", help="reranker weights JSON (word models)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate",
                       help="score a model or baseline against highlights")
    p.add_argument("--corpus", required=True,
                   help="corpus JSONL with highlights")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="checkpoint path")
    group.add_argument("--baseline", choices=("lead3", "lreg"))
    p.add_argument("--limit", action="append",
                   help="words:N | bytes:N | none (repeatable)")
    p.add_argument("--out", help="report base path (.json/.txt/.png)")
    p.add_argument("--k", type=int, help="sentences per summary")
    p.add_argument("--beam", type=int, help="beam width (word models)")
    p.add_argument("--max-len", type=int)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--reranker", help="reranker weights JSON")
    p.add_argument("--train-corpus",
                   help="labeled corpus for the lreg baseline")
    p.add_argument("--embeddings", help="embedding file for lreg features")
    p.add_argument("--dim", type=int, default=150,
                   help="random embedding width for lreg")
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rouge", help="score system summaries against refs")
    p.add_argument("--sys", required=True, help="summaries JSONL")
    p.add_argument("--ref", required=True,
                   help="reference JSONL ({id, tokens} or {id, refs})")
    p.add_argument("--limit", action="append",
                   help="words:N | bytes:N | none (repeatable)")
    p.add_argument("--out", help="report base path (.json/.txt/.png)")
    p.set_defaults(func=cmd_rouge)

    p = sub.add_parser("report-attention",
                       help="render per-sentence score heat reports")
    p.add_argument("--model", required=True,
                   help="sentence extractor checkpoint")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ids", help="comma-separated document ids")
    p.add_argument("--k", type=int, help="sentences per summary")
    p.add_argument("--limit", help="words:N | bytes:N | none")
    p.set_defaults(func=cmd_report_attention)

    p = sub.add_parser("tune-reranker",
                       help="fit reranker weights on a validation corpus")
    p.add_argument("--model", required=True, help="word extractor checkpoint")
    p.add_argument("--corpus", required=True,
                   help="corpus JSONL with highlights")
    p.add_argument("--out", required=True, help="weights JSON path")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_tune_reranker)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(logging.DEBUG if args.verbose > 1
               else logging.INFO if args.verbose else logging.WARNING),
        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: io: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
