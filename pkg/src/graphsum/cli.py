"""Command-line entry point: build-graph, train, summarize, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import Config, load_config
from .errors import GraphSumError, IntegrityError, ValidationError
from .evaluation import evaluate_corpus, lead_baseline
from .graphs import (DEFAULT_MARKERS, GRAPH_TYPES, GraphMatrix, build_discourse_graph, build_similarity_graph,
                     build_topic_graph, fit_lda, load_marker_lexicon, normalize_graph)
from .text import build_vocab, corpus_token_streams, prepare_record, read_corpus, split_paragraphs, tokenize

log = logging.getLogger("graphsum")

EXIT_USAGE = 2


def build_graphs(records: list[dict], cfg: Config) -> list[GraphMatrix]:
    """One graph per record, over the same paragraph split the model sees."""
    g = cfg.graph
    if g.type not in GRAPH_TYPES:
        raise ValidationError(f"unknown graph type {g.type!r}; choose from {', '.join(GRAPH_TYPES)}")
    caps = (cfg.model.max_paragraphs, cfg.model.max_paragraph_tokens)
    split = [split_paragraphs(r["documents"], *caps) for r in records]
    graphs = []
    if g.type == "similarity":
        graphs = [build_similarity_graph([tokenize(p) for p in paras]) for paras, _ in split]
    elif g.type == "topic":
        flat = [tokenize(p) for paras, _ in split for p in paras]
        model = fit_lda(flat, g.lda_topics, g.lda_iterations, g.lda_alpha, g.lda_beta, g.lda_seed)
        theta, k = model.theta, 0
        for paras, _ in split:
            graphs.append(build_topic_graph(theta[k:k + len(paras)]))
            k += len(paras)
    else:
        markers = load_marker_lexicon(g.markers_path) if g.markers_path else list(DEFAULT_MARKERS)
        graphs = [build_discourse_graph([tokenize(p, lower=False) for p in paras], origins, markers, g.entity_min_len)
                  for paras, origins in split]
    return [normalize_graph(x, g.threshold) for x in graphs]


def write_graph_dir(graphs: list[GraphMatrix], out_dir: Path, kind: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, gm in enumerate(graphs):
        name = f"{k:06d}.json"
        gm.save(out_dir / name)
        files.append(name)
    (out_dir / "manifest.json").write_text(json.dumps({"type": kind, "count": len(graphs), "files": files}, indent=1))


def read_graph_dir(graph_dir: Path, expected: int) -> list[GraphMatrix]:
    manifest_path = graph_dir / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"{graph_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    files = manifest.get("files", [])
    missing = [k for k in range(expected) if k >= len(files) or not (graph_dir / files[k]).exists()]
    if missing:
        raise ValidationError(f"missing graphs for instances {missing[:50]}")
    if len(files) != expected:
        raise ValidationError(f"{len(files)} graphs for {expected} instances")
    return [GraphMatrix.load(graph_dir / f) for f in files]


def _config(args, overrides: dict | None = None) -> Config:
    merged: dict = {}
    for section, values in (overrides or {}).items():
        values = {k: v for k, v in values.items() if v is not None}
        if values:
            merged[section] = values
    return load_config(getattr(args, "config", None), merged)


def cmd_build_graph(args) -> int:
    cfg = _config(args, {"graph": {"type": args.graph, "threshold": args.threshold, "markers_path": args.markers,
                                   "lda_topics": args.lda_topics, "lda_iterations": args.lda_iterations,
                                   "lda_seed": args.seed}})
    records = read_corpus(args.corpus)
    graphs = build_graphs(records, cfg)
    write_graph_dir(graphs, Path(args.out), cfg.graph.type)
    print(f"wrote {len(graphs)} {cfg.graph.type} graphs to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import Trainer, load_checkpoint, save_checkpoint
    from .model import GraphSum

    model_over = {"sigma": args.sigma}
    if args.no_graph_enc:
        model_over["ablate_graph_enc"] = True
    if args.no_graph_dec:
        model_over["ablate_graph_dec"] = True
    cfg = _config(args, {"model": model_over, "train": {"seed": args.seed, "max_steps": args.max_steps}})
    records = read_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.resume:
        trainer = load_checkpoint(args.resume)
        vocab = trainer.vocab
        if vocab is None:
            raise ValidationError("checkpoint carries no vocabulary")
        trainer.cfg = cfg.train.validate()
    else:
        vocab = build_vocab(corpus_token_streams(records, cfg.model.max_paragraphs, cfg.model.max_paragraph_tokens),
                            cfg.vocab_min_freq, cfg.vocab_max_size)
        cfg.model.vocab_size = len(vocab)
        trainer = Trainer(GraphSum(cfg.model, seed=cfg.train.seed), cfg.train, vocab)
    vocab.save(out / "vocab.json")
    m = trainer.model.cfg
    instances = [prepare_record(r, vocab, m.max_paragraphs, m.max_paragraph_tokens, m.max_summary_tokens) for r in records]
    graphs = read_graph_dir(Path(args.graphs), len(instances))
    log.info("training %d parameters on %d instances from step %d", trainer.model.num_parameters(), len(instances), trainer.step)
    trainer.fit(instances, graphs, checkpoint_dir=out, log_path=out / "train.jsonl")
    save_checkpoint(trainer, out / "final.ckpt")
    last = trainer.history[-1]["loss"] if trainer.history else float("nan")
    print(f"trained to step {trainer.step}, last loss {last:.4f}; checkpoint {out / 'final.ckpt'}")
    return 0


def cmd_summarize(args) -> int:
    from .inference import summarize
    from .training import load_checkpoint

    trainer = load_checkpoint(args.checkpoint)
    model, vocab = trainer.model, trainer.vocab
    if vocab is None:
        raise ValidationError("checkpoint carries no vocabulary")
    cfg = _config(args, {"decode": {"beam": args.beam, "alpha": args.alpha, "max_len": args.max_len,
                                    "min_len": args.min_len}})
    if args.no_trigram_block:
        cfg.decode.block_trigrams = False
    cfg.model = model.cfg
    records = read_corpus(args.input)
    m = model.cfg
    instances = [prepare_record(r, vocab, m.max_paragraphs, m.max_paragraph_tokens, m.max_summary_tokens,
                                training=False) for r in records]
    if args.graph in GRAPH_TYPES:
        cfg.graph.type = args.graph
        graphs = build_graphs(records, cfg)
    else:
        graphs = read_graph_dir(Path(args.graph), len(instances))
    lines = [summarize(model, inst, g, vocab, cfg.decode) for inst, g in zip(instances, graphs)]
    Path(args.out).write_text("".join(line + "\n" for line in lines))
    print(f"wrote {len(lines)} summaries to {args.out}")
    return 0


def _read_summaries(path) -> list[list[str]]:
    path = Path(path)
    if path.suffix == ".jsonl":
        return [tokenize(r.get("summary") or "") for r in read_corpus(path)]
    return [tokenize(line) for line in path.read_text(encoding="utf-8").splitlines()]


def cmd_evaluate(args) -> int:
    if args.baseline == "lead":
        if not args.corpus:
            raise ValidationError("--baseline lead needs --corpus")
        cfg = _config(args)
        records = read_corpus(args.corpus)
        system = []
        for r in records:
            paras, _ = split_paragraphs(r["documents"], cfg.model.max_paragraphs, cfg.model.max_paragraph_tokens)
            system.append(lead_baseline([tokenize(p) for p in paras], args.k))
        references = _read_summaries(args.reference) if args.reference else [tokenize(r.get("summary") or "") for r in records]
    else:
        if not args.system or not args.reference:
            raise ValidationError("evaluate needs --system and --reference (or --baseline lead --corpus)")
        system, references = _read_summaries(args.system), _read_summaries(args.reference)
    report = evaluate_corpus(system, references)
    report["rouge_l_mode"] = args.rouge_l
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    agg = report["aggregate"]
    lkey = "rouge-l" if args.rouge_l == "summary" else "rouge-l-sentence"
    print(f"R-1 {agg['rouge-1']['f1']:.2f}  R-2 {agg['rouge-2']['f1']:.2f}  R-L {agg[lkey]['f1']:.2f}  (n={report['count']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphsum", allow_abbrev=False,
                                     description="Graph-informed multi-document summarization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", allow_abbrev=False, help="build one paragraph graph per corpus instance")
    p.add_argument("--corpus", required=True, help="JSON-lines corpus")
    p.add_argument("--graph", choices=GRAPH_TYPES, default=None, help="graph type (default: similarity)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=None, help="zero off-diagonal weights below this value")
    p.add_argument("--markers", default=None, help="discourse marker lexicon file, one word per line")
    p.add_argument("--lda-topics", type=int, default=None)
    p.add_argument("--lda-iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="LDA sampler seed")
    p.add_argument("--config", default=None, help="JSON config file")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", allow_abbrev=False, help="train a model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--graphs", required=True, help="directory written by build-graph")
    p.add_argument("--out", required=True, help="directory for checkpoints, vocab and log")
    p.add_argument("--config", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--no-graph-enc", action="store_true", help="drop the graph bias in the encoder")
    p.add_argument("--no-graph-dec", action="store_true", help="drop the graph penalty in the decoder")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", allow_abbrev=False, help="decode summaries with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSON-lines corpus")
    p.add_argument("--graph", required=True, help="graph directory, or a graph type to build on the fly")
    p.add_argument("--out", required=True, help="output text file, one summary per line")
    p.add_argument("--config", default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None, help="length penalty factor")
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--min-len", type=int, default=None)
    p.add_argument("--no-trigram-block", action="store_true")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", allow_abbrev=False, help="score summaries with ROUGE")
    p.add_argument("--system", default=None, help="system summaries, one per line")
    p.add_argument("--reference", default=None, help="references: text lines or a .jsonl corpus")
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--rouge-l", choices=("summary", "sentence"), default="summary")
    p.add_argument("--baseline", choices=("lead",), default=None)
    p.add_argument("--k", type=int, default=100, help="Lead baseline length in tokens")
    p.add_argument("--corpus", default=None, help="corpus for --baseline")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except GraphSumError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"error[validation]: invalid JSON: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return IntegrityError.exit_code


if __name__ == "__main__":
    sys.exit(main())
