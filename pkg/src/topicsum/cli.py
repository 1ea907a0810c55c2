"""Command-line pipeline: synthetic corpus, LDA training/selection, guidance
reconstructor, summarizer training (baseline / topical / controlled),
generation, and evaluation.

One JSON config document drives everything (per-module sections; CLI flags
override individual fields). Artifacts land in the config's out_dir; every
artifact embeds the config digest and seed, and the pipeline manifest
records artifact hashes so a run is reproducible bit-for-bit from the
config alone.

Exit codes: 0 success, 1 usage error, 2 stage failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import lda as lda_mod
from . import synth as synth_mod
from .corpus import (
    DEFAULT_STOPWORDS, Vocabulary, build_vocab, dataset_hash, encode_records,
    load_stopwords, read_jsonl, record_token_seqs, tokenize, write_jsonl,
)
from .decode import DecodeConfig, beam_search, strip_eos
from .guidance import (
    FfnConfig, FfnWeights, ffn_training_pairs, guidance_for_example, train_ffn,
)
from .lda import LdaConfig, TopicModel, fold_in
from .metrics import corpus_rouge, topic_focus
from .model import ModelConfig, ModelWeights, train_summarizer
from .serialize import config_digest, sha256_file


class UsageError(Exception):
    pass


def experiment_digest(cfg: dict) -> str:
    """Digest of the config's experimental content; the output location is
    not part of the experiment's identity."""
    return config_digest({k: v for k, v in cfg.items() if k != "out_dir"})


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    for field in ("data.train", "data.test"):
        section, key = field.split(".")
        value = cfg.get(section, {}).get(key)
        if value is not None and not Path(value).exists():
            raise UsageError(f"config field {field} points to a missing path: {value}")
    stop_path = cfg.get("data", {}).get("stopwords")
    if stop_path is not None and not Path(stop_path).exists():
        raise UsageError(
            f"config field data.stopwords points to a missing path: {stop_path}")
    return cfg


def _stopwords(cfg: dict):
    path = cfg.get("data", {}).get("stopwords")
    return load_stopwords(path) if path else DEFAULT_STOPWORDS


def _out_dir(cfg: dict, override=None) -> Path:
    out = Path(override or cfg.get("out_dir", "runs/out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lda_config(cfg: dict, seed=None) -> LdaConfig:
    section = dict(cfg.get("lda", {}))
    section.pop("candidate_ks", None)
    section.setdefault("seed", seed if seed is not None else cfg.get("seed", 0))
    return LdaConfig(**section)


def _foldin_config(cfg: dict, k: int) -> LdaConfig:
    base = _lda_config(cfg)
    section = dict(cfg.get("foldin", {}))
    return LdaConfig(
        k=k,
        alpha=section.get("alpha", base.alpha),
        eta=section.get("eta", base.eta),
        iterations=section.get("iterations", 300),
        burn_in=section.get("burn_in", 150),
        sample_lag=section.get("sample_lag", 15),
        seed=section.get("seed", 0),
    )


def _decode_config(cfg: dict, args=None) -> DecodeConfig:
    section = dict(cfg.get("decode", {}))
    dc = DecodeConfig(**section)
    if args is not None:
        if args.beam is not None:
            dc.beam_size = args.beam
        if args.length_penalty is not None:
            dc.length_penalty = args.length_penalty
        if args.max_len is not None:
            dc.max_length = args.max_len
        if args.min_len is not None:
            dc.min_length = args.min_len
        if args.no_repeat_ngram is not None:
            dc.no_repeat_ngram = args.no_repeat_ngram
        if args.early_stopping is not None:
            dc.early_stopping = bool(args.early_stopping)
    dc.validate()
    return dc


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _prepare_docs(records, vocab, stopwords):
    """Unique source documents (by doc id prefix) as filtered id arrays."""
    stop_ids = lda_mod.stopword_id_set(vocab, stopwords)
    seen = set()
    docs = []
    for rec in records:
        doc_key = rec["id"].split("-")[0]
        if doc_key in seen:
            continue
        seen.add(doc_key)
        docs.append(lda_mod.filter_doc(vocab.encode(tokenize(rec["source"])),
                                       stop_ids))
    return docs, stop_ids


def annotate_records(records, model: TopicModel, vocab: Vocabulary,
                     foldin_cfg: LdaConfig) -> list:
    """Re-derive each record's target topic in the trained model's label
    space (fold the reference summary in, take the argmax topic).

    Synthetic generator labels live in a different space than the trained
    topics, so controlled guidance and the focus score must use model-space
    ids.
    """
    out = []
    for rec in records:
        rec = dict(rec)
        ids = vocab.encode(tokenize(rec.get("summary", "")))
        mixture = fold_in(model, ids, foldin_cfg)
        rec["target_topics"] = [[int(np.argmax(mixture.theta)), 1.0]]
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth_corpus(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    section = dict(cfg.get("synth", {}))
    section.setdefault("seed", cfg.get("seed", 0))
    scfg = synth_mod.SynthConfig(**section)
    records, truth = synth_mod.synth_corpus(scfg)
    train, test = synth_mod.split_records(
        records, cfg.get("data", {}).get("test_fraction", 0.2))
    write_jsonl(out / "train.jsonl", train)
    write_jsonl(out / "test.jsonl", test)
    _write_json(out / "synth_truth.json", {
        "config": scfg.to_dict(),
        "doc_topics": truth["doc_topics"],
        "words": truth["words"],
        "word_dists": [list(row) for row in truth["word_dists"]],
    })
    print(f"wrote {len(train)} train / {len(test)} test records to {out}")
    return 0


def _load_dataset(cfg, out: Path, split: str):
    """Records for a split: explicit data paths win, else the synth output
    in out_dir."""
    path = cfg.get("data", {}).get(split)
    if path is None:
        path = out / f"{split}.jsonl"
        if not path.exists():
            raise UsageError(
                f"no data.{split} path configured and {path} does not exist "
                "(run synth-corpus first)")
    return read_jsonl(path)


def _build_vocab(cfg, train_records) -> Vocabulary:
    min_count = cfg.get("data", {}).get("min_count", 1)
    return build_vocab(record_token_seqs(train_records), min_count=min_count)


def cmd_train_lda(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    train_records = _load_dataset(cfg, out, "train")
    vocab = _build_vocab(cfg, train_records)
    vocab.save(out / "vocab.json")
    stopwords = _stopwords(cfg)
    docs, stop_ids = _prepare_docs(train_records, vocab, stopwords)
    ldacfg = _lda_config(cfg, seed=args.seed)
    model = lda_mod.train_gibbs(docs, vocab.size, ldacfg,
                                stopword_ids=stop_ids,
                                vocab_hash=vocab.content_hash())
    model.save(out / "lda.ckpt")
    print(f"trained LDA k={ldacfg.k} on {len(docs)} docs; "
          f"NLL={lda_mod.neg_log_likelihood(model):.2f}; wrote {out/'lda.ckpt'}")
    return 0


def cmd_select_topics(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    train_records = _load_dataset(cfg, out, "train")
    vocab = _build_vocab(cfg, train_records)
    vocab.save(out / "vocab.json")
    stopwords = _stopwords(cfg)
    docs, stop_ids = _prepare_docs(train_records, vocab, stopwords)
    candidates = cfg.get("lda", {}).get("candidate_ks") or list(
        lda_mod.DEFAULT_CANDIDATE_KS)
    if args.candidates:
        candidates = [int(c) for c in args.candidates.split(",")]
    base = _lda_config(cfg, seed=args.seed)
    best_k, model, table = lda_mod.select_k(
        docs, candidates, base, vocab.size,
        stopword_ids=stop_ids, vocab_hash=vocab.content_hash())
    model.save(out / "lda.ckpt")
    _write_json(out / "select_topics.json",
                {"best_k": best_k, "table": table,
                 "config_digest": experiment_digest(cfg), "seed": base.seed})
    for row in table:
        print(row)
    print(f"selected k={best_k}; wrote {out/'lda.ckpt'}")
    return 0


def cmd_train_ffn(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    train_records = _load_dataset(cfg, out, "train")
    vocab = Vocabulary.load(out / "vocab.json")
    model = TopicModel.load(out / "lda.ckpt")
    foldin = _foldin_config(cfg, model.k)
    examples = encode_records(train_records, vocab)
    section = dict(cfg.get("ffn", {}))
    if args.epochs is not None:
        section["epochs"] = args.epochs
    if args.hidden is not None:
        section["hidden"] = args.hidden
    section.setdefault("seed", cfg.get("seed", 0))
    fcfg = FfnConfig(**section)
    pairs = ffn_training_pairs(examples, vocab, model, foldin)
    weights, losses = train_ffn(pairs, fcfg, vocab_hash=vocab.content_hash())
    weights.save(out / "ffn.ckpt")
    print(f"trained reconstructor for {fcfg.epochs} epochs; "
          f"loss {losses[0]:.3f} -> {losses[-1]:.3f}; wrote {out/'ffn.ckpt'}")
    return 0


def _model_config(cfg, vocab_size, topical: bool, seed) -> ModelConfig:
    section = dict(cfg.get("model", {}))
    section["vocab_size"] = vocab_size
    section["topical_attention"] = topical
    section.setdefault("seed", seed)
    return ModelConfig.from_dict(section)


def _guidance_fn(mode, model, ffn, vocab, stopwords, foldin):
    if mode == "baseline":
        return None
    return lambda ex: guidance_for_example(
        ex, model, ffn, mode, vocab, stopwords, foldin_cfg=foldin)


def cmd_train_summarizer(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    vocab = Vocabulary.load(out / "vocab.json")
    model = TopicModel.load(out / "lda.ckpt")
    foldin = _foldin_config(cfg, model.k)
    mode = args.mode or cfg.get("guidance_mode", "controlled")
    topical = mode != "baseline"
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)

    train_records = _load_dataset(cfg, out, "train")
    if cfg.get("annotate_targets", True):
        train_records = annotate_records(train_records, model, vocab, foldin)
    examples = encode_records(train_records, vocab)

    ffn = None
    if mode == "ffn":
        ffn = FfnWeights.load(out / "ffn.ckpt")
    stopwords = _stopwords(cfg)
    gfn = _guidance_fn(mode, model, ffn, vocab, stopwords, foldin)

    section = dict(cfg.get("train", {}))
    if args.epochs is not None:
        section["epochs"] = args.epochs
    mcfg = _model_config(cfg, vocab.size, topical, seed)
    weights = ModelWeights(mcfg, vocab_hash=vocab.content_hash())
    ckpt_dir = out / f"checkpoints_{mode}"
    ckpt_dir.mkdir(exist_ok=True)
    weights, metrics = train_summarizer(
        examples, weights, guidance_fn=gfn,
        epochs=section.get("epochs", 5), lr=section.get("lr", 1e-3),
        seed=seed, batch_size=section.get("batch_size", 8),
        checkpoint_dir=str(ckpt_dir),
        log=lambda e: print(f"  epoch {e['epoch']}: loss {e['train_loss']:.4f}"))
    path = out / f"model_{mode}.ckpt"
    weights.save(path, epoch=section.get("epochs", 5))
    _write_json(out / f"train_metrics_{mode}.json",
                {"metrics": metrics, "mode": mode, "seed": seed,
                 "config_digest": experiment_digest(cfg)})
    print(f"wrote {path}")
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    vocab = Vocabulary.load(out / "vocab.json")
    model = TopicModel.load(out / "lda.ckpt")
    foldin = _foldin_config(cfg, model.k)
    mode = args.mode or cfg.get("guidance_mode", "controlled")
    if args.model:
        model_path = args.model
    elif mode == "baseline":
        model_path = out / "model_baseline.ckpt"
    else:
        # non-baseline generation modes share the topical model trained in
        # the configured guidance mode
        model_path = out / f"model_{cfg.get('guidance_mode', 'controlled')}.ckpt"
    weights = ModelWeights.load(model_path)

    test_records = _load_dataset(cfg, out, "test")
    if cfg.get("annotate_targets", True):
        test_records = annotate_records(test_records, model, vocab, foldin)
    examples = encode_records(test_records, vocab, for_training=False)

    ffn = None
    if mode == "ffn":
        ffn = FfnWeights.load(out / "ffn.ckpt")
    stopwords = _stopwords(cfg)
    gfn = _guidance_fn(mode, model, ffn, vocab, stopwords, foldin)
    dcfg = _decode_config(cfg, args)

    rows = []
    for ex in examples:
        gv = gfn(ex) if (gfn and weights.config.topical_attention) else None
        tokens, logprob, score = beam_search(weights, ex.source, gv, dcfg,
                                             prompt_ids=ex.topic_prompt)
        rows.append({
            "id": ex.id,
            "summary": " ".join(vocab.decode(strip_eos(tokens))),
            "logprob": logprob,
            "normalized_score": score,
        })
    out_path = Path(args.out) if args.out else out / f"generated_{mode}.jsonl"
    write_jsonl(out_path, rows)
    print(f"decoded {len(rows)} examples to {out_path}")
    return 0


def _evaluate(cfg, generated_path, reference_path, lda_path, out_path) -> dict:
    generated = read_jsonl(generated_path, required=("id", "summary"))
    reference = read_jsonl(reference_path)
    if len(generated) != len(reference):
        raise ValueError(
            f"generated ({len(generated)}) and reference ({len(reference)}) "
            "example counts differ")
    by_id = {rec["id"]: rec for rec in generated}
    missing = [rec["id"] for rec in reference if rec["id"] not in by_id]
    if missing:
        raise ValueError(f"generated output missing ids: {missing[:5]}")

    model = TopicModel.load(lda_path)
    vocab_path = Path(lda_path).parent / "vocab.json"
    vocab = Vocabulary.load(vocab_path)
    foldin = _foldin_config(cfg, model.k)
    if cfg.get("annotate_targets", True):
        reference = annotate_records(reference, model, vocab, foldin)

    cands, refs, summaries, targets = [], [], [], []
    for rec in reference:
        gen_tokens = tokenize(by_id[rec["id"]]["summary"])
        ref_tokens = tokenize(rec["summary"])
        cands.append(gen_tokens)
        refs.append(ref_tokens)
        if rec.get("target_topics"):
            summaries.append(vocab.encode(gen_tokens))
            targets.append(int(rec["target_topics"][0][0]))
    report = corpus_rouge(cands, refs)
    if targets and len(targets) == len(reference):
        focus = topic_focus(model, summaries, targets, foldin)
        report["topic_focus"] = focus.mean
        report["topic_focus_flagged"] = len(focus.flagged)
    else:
        report["topic_focus"] = None
        report["topic_focus_flagged"] = None
    report["n_examples"] = len(reference)
    report["test_set_hash"] = dataset_hash(read_jsonl(reference_path))
    report["config_digest"] = experiment_digest(cfg)
    report["seed"] = cfg.get("seed", 0)
    _write_json(out_path, report)
    return report


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    generated = args.generated or str(out / "generated_controlled.jsonl")
    reference = args.reference or str(out / "test.jsonl")
    lda_path = args.lda or str(out / "lda.ckpt")
    out_path = args.out or str(out / "report.json")
    report = _evaluate(cfg, generated, reference, lda_path, out_path)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_compare(args) -> int:
    with open(args.report_a, encoding="utf-8") as fh:
        a = json.load(fh)
    with open(args.report_b, encoding="utf-8") as fh:
        b = json.load(fh)
    if a.get("test_set_hash") != b.get("test_set_hash"):
        raise ValueError("reports describe different test sets (hash mismatch)")
    if a.get("n_examples") != b.get("n_examples"):
        raise ValueError("reports cover different example counts")
    deltas = {}
    for key in ("rouge1", "rouge2", "rougeL", "topic_focus"):
        if a.get(key) is None or b.get(key) is None:
            deltas[key] = None
        else:
            deltas[key] = b[key] - a[key]
    result = {
        "deltas_b_minus_a": deltas,
        "topic_focus_improved": (deltas["topic_focus"] is not None
                                 and deltas["topic_focus"] > 0),
        "n_examples": a.get("n_examples"),
    }
    if args.out:
        _write_json(args.out, result)
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out_dir)
    stage = "synth-corpus"
    try:
        if "synth" in cfg:
            cmd_synth_corpus(args)
        stage = "train-lda"
        if cfg.get("lda", {}).get("candidate_ks"):
            ns = argparse.Namespace(config=args.config, out_dir=args.out_dir,
                                    seed=None, candidates=None)
            cmd_select_topics(ns)
        else:
            ns = argparse.Namespace(config=args.config, out_dir=args.out_dir,
                                    seed=None)
            cmd_train_lda(ns)
        stage = "train-ffn"
        ns = argparse.Namespace(config=args.config, out_dir=args.out_dir,
                                epochs=None, hidden=None)
        cmd_train_ffn(ns)
        stage = "train-summarizer"
        topical_mode = cfg.get("guidance_mode", "controlled")
        for mode in ("baseline", topical_mode):
            ns = argparse.Namespace(config=args.config, out_dir=args.out_dir,
                                    mode=mode, epochs=None, seed=None)
            cmd_train_summarizer(ns)
        stage = "generate"
        gen_modes = ["baseline", topical_mode]
        if topical_mode != "ffn" and (out / "ffn.ckpt").exists():
            gen_modes.append("ffn")
        for mode in gen_modes:
            model_path = str(out / ("model_baseline.ckpt" if mode == "baseline"
                                    else f"model_{topical_mode}.ckpt"))
            ns = argparse.Namespace(
                config=args.config, out_dir=args.out_dir, mode=mode,
                model=model_path, out=str(out / f"generated_{mode}.jsonl"),
                beam=None, length_penalty=None, max_len=None, min_len=None,
                no_repeat_ngram=None, early_stopping=None)
            cmd_generate(ns)
        stage = "evaluate"
        reports = {}
        for mode in gen_modes:
            reports[mode] = _evaluate(
                cfg, out / f"generated_{mode}.jsonl", out / "test.jsonl",
                out / "lda.ckpt", out / f"report_{mode}.json")
        stage = "compare"
        ns = argparse.Namespace(
            report_a=str(out / "report_baseline.json"),
            report_b=str(out / f"report_{topical_mode}.json"),
            out=str(out / "compare.json"))
        cmd_compare(ns)
        stage = "manifest"
        artifacts = {}
        for path in sorted(out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                artifacts[str(path.relative_to(out))] = sha256_file(path)
        _write_json(out / "manifest.json", {
            "config": cfg,
            "config_digest": experiment_digest(cfg),
            "seed": cfg.get("seed", 0),
            "artifacts": artifacts,
            "metrics": reports,
        })
    except UsageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    print(f"pipeline complete; manifest at {out/'manifest.json'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topicsum",
                     description="Topic-controlled summarization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out-dir", default=None,
                       help="override the config's out_dir")

    p = sub.add_parser("synth-corpus", help="generate the synthetic corpus")
    common(p)

    p = sub.add_parser("train-lda", help="train the topic model")
    common(p)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("select-topics",
                       help="sweep candidate topic counts, keep the best")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--candidates", default=None,
                   help="comma-separated topic counts (default 50..300 by 50)")

    p = sub.add_parser("train-ffn", help="train the guidance reconstructor")
    common(p)
    p.add_argument("--epochs", type=int, default=None, help="default 15")
    p.add_argument("--hidden", type=int, default=None,
                   help="hidden width; 0 = single affine map (default)")

    p = sub.add_parser("train-summarizer", help="train a summarizer")
    common(p)
    p.add_argument("--mode", default=None,
                   choices=["baseline", "ffn", "lda-target", "controlled"])
    p.add_argument("--epochs", type=int, default=None, help="default 5")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("generate", help="decode summaries for a test set")
    common(p)
    p.add_argument("--model", default=None, help="summarizer checkpoint")
    p.add_argument("--mode", default=None,
                   choices=["baseline", "ffn", "lda-target", "controlled"])
    p.add_argument("--out", default=None, help="output JSONL")
    p.add_argument("--beam", type=int, default=None, help="default 4")
    p.add_argument("--length-penalty", type=float, default=None,
                   help="default 2.0")
    p.add_argument("--max-len", type=int, default=None, help="default 180")
    p.add_argument("--min-len", type=int, default=None, help="default 56")
    p.add_argument("--no-repeat-ngram", type=int, default=None,
                   help="default 3")
    p.add_argument("--early-stopping", type=int, choices=[0, 1], default=None,
                   help="default 1")

    p = sub.add_parser("evaluate", help="score generated against reference")
    common(p)
    p.add_argument("--generated", default=None)
    p.add_argument("--reference", default=None)
    p.add_argument("--lda", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("compare", help="delta table between two reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out", default=None)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    common(p)

    return parser


COMMANDS = {
    "synth-corpus": cmd_synth_corpus,
    "train-lda": cmd_train_lda,
    "select-topics": cmd_select_topics,
    "train-ffn": cmd_train_ffn,
    "train-summarizer": cmd_train_summarizer,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
