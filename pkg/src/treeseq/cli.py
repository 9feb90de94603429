"""Command-line surface: gen-data, train, eval, decode, parse, verify."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .data import (
    QUESTION_SPLITS,
    SCAN_SPLITS,
    generate_question_formation,
    generate_scan,
)
from .decode import best_tree_given_tokens, decode_joint, rescore_joint, rescore_tree
from .errors import TreeSeqError
from .marginal import EmissionGrid
from .model import ModelConfig, TreeSeqModel, load_checkpoint, save_checkpoint
from .topology import render_tree
from .training import (
    Corpus,
    TrainConfig,
    Vocab,
    evaluate,
    load_corpus,
    save_corpus,
    train,
)
from .verify import run_all

USAGE_ERROR = 2
DOMAIN_ERROR = 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeseq",
        description="Latent-tree sequence model: training, decoding, and oracles.",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verbosity", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write synthetic corpora and vocab files")
    gen.add_argument("--task", choices=("scan", "questions"), default="scan")
    gen.add_argument("--split", default="simple",
                     help=f"scan: {SCAN_SPLITS}; questions: {QUESTION_SPLITS}")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n-train", type=int, default=500)
    gen.add_argument("--n-test", type=int, default=200)
    gen.add_argument("--max-target-len", type=int, default=32)
    gen.add_argument("--max-clauses", type=int, default=2)
    gen.add_argument("--sampling", choices=("distinct", "replacement"), default="distinct")

    tr = sub.add_parser("train", help="maximum-likelihood training")
    tr.add_argument("--train-corpus", required=True)
    tr.add_argument("--eval-corpus")
    tr.add_argument("--src-vocab", required=True)
    tr.add_argument("--tgt-vocab", required=True)
    tr.add_argument("--checkpoint", help="path for the best checkpoint")
    tr.add_argument("--metrics", help="path for the metrics log")
    tr.add_argument("--depth", type=int, default=5)
    tr.add_argument("--dim", type=int, default=32)
    tr.add_argument("--emission", choices=("mlp", "lexical-attention"), default="mlp")
    tr.add_argument("--context", choices=("none", "mean-mlp"), default="mean-mlp")
    tr.add_argument("--epochs", type=int, default=10)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--learning-rate", type=float, default=5e-3)
    tr.add_argument("--eval-every", type=int, default=1)
    tr.add_argument("--clip-norm", type=float, default=5.0)

    ev = sub.add_parser("eval", help="accuracy of a checkpoint on a corpus")
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--src-vocab", required=True)
    ev.add_argument("--tgt-vocab", required=True)
    ev.add_argument("--mode", choices=("full-sequence", "first-word"),
                    default="full-sequence")
    ev.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    de = sub.add_parser("decode", help="joint-decode sources to tokens and trees")
    de.add_argument("--checkpoint", required=True)
    de.add_argument("--src-vocab", required=True)
    de.add_argument("--tgt-vocab", required=True)
    de.add_argument("--input", help="source file, one example per line (default stdin)")
    de.add_argument("--max-len", type=int)
    de.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    pa = sub.add_parser("parse", help="best tree for observed target sentences")
    pa.add_argument("--checkpoint", required=True)
    pa.add_argument("--src-vocab", required=True)
    pa.add_argument("--tgt-vocab", required=True)
    pa.add_argument("--input", help="lines 'src TAB tgt' or bare targets (default stdin)")

    ve = sub.add_parser("verify", help="run the oracle suites and print a table")
    ve.add_argument("--depth", type=int, default=3)
    return parser


def _read_lines(path: "str | None"):
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh if line.strip()]
    return [line.rstrip("\n") for line in sys.stdin if line.strip()]


def _cmd_gen_data(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.task == "scan":
        splits = generate_scan(
            split=args.split,
            n_train=args.n_train,
            n_test=args.n_test,
            seed=args.seed,
            max_target_len=args.max_target_len,
            max_clauses=args.max_clauses,
            sampling=args.sampling,
        )
    else:
        if args.split not in QUESTION_SPLITS:
            raise TreeSeqError(f"questions task supports splits {QUESTION_SPLITS}")
        splits = generate_question_formation(
            n_train=args.n_train, n_test=args.n_test, seed=args.seed
        )
    pairs = list(splits.train) + list(splits.test) + list(splits.generalization)
    src_vocab = Vocab.build(w for src, _ in pairs for w in src)
    tgt_vocab = Vocab.build(w for _, tgt in pairs for w in tgt)
    save_corpus(os.path.join(args.out, "train.tsv"), splits.train)
    save_corpus(os.path.join(args.out, "test.tsv"), splits.test)
    if splits.generalization:
        save_corpus(os.path.join(args.out, "gen.tsv"), splits.generalization)
    src_vocab.save(os.path.join(args.out, "src_vocab.txt"))
    tgt_vocab.save(os.path.join(args.out, "tgt_vocab.txt"))
    print(
        f"wrote {len(splits.train)} train / {len(splits.test)} test"
        + (f" / {len(splits.generalization)} gen" if splits.generalization else "")
        + f" examples to {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    src_vocab = Vocab.load(args.src_vocab)
    tgt_vocab = Vocab.load(args.tgt_vocab)
    corpus = load_corpus(args.train_corpus, src_vocab, tgt_vocab)
    eval_corpus = (
        load_corpus(args.eval_corpus, src_vocab, tgt_vocab) if args.eval_corpus else None
    )
    model_config = ModelConfig(
        depth=args.depth,
        dim=args.dim,
        src_vocab_size=len(src_vocab),
        tgt_vocab_size=len(tgt_vocab),
        emission_mode=args.emission.replace("-", "_"),
        context_mode=args.context.replace("-", "_"),
        seed=args.seed,
    )
    train_config = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        clip_norm=args.clip_norm,
        eval_every=args.eval_every,
    )
    result = train(
        corpus,
        model_config,
        train_config,
        eval_corpus=eval_corpus,
        checkpoint_path=args.checkpoint,
        metrics_path=args.metrics,
        log=print,
    )
    print(f"done in {result.elapsed_seconds:.1f}s")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    src_vocab = Vocab.load(args.src_vocab)
    tgt_vocab = Vocab.load(args.tgt_vocab)
    corpus = load_corpus(args.corpus, src_vocab, tgt_vocab)
    accuracy = evaluate(
        corpus, model, mode=args.mode.replace("-", "_"), jobs=args.jobs
    )
    print(f"{args.mode} accuracy: {accuracy:.4f}")
    return 0


def _cmd_decode(args) -> int:
    model = load_checkpoint(args.checkpoint)
    src_vocab = Vocab.load(args.src_vocab)
    tgt_vocab = Vocab.load(args.tgt_vocab)
    for line in _read_lines(args.input):
        src = src_vocab.encode(line.split())
        field, emission_lp = model.infer(src)
        result = decode_joint(field, emission_lp, max_len=args.max_len)
        words = tgt_vocab.decode(result.tokens)
        tree_text = render_tree(result.tree, words)
        out = " ".join(words) + "\t" + tree_text
        if args.verbosity >= 1:
            out += f"\t{rescore_joint(field, emission_lp, result)!r}"
        print(out)
    return 0


def _cmd_parse(args) -> int:
    model = load_checkpoint(args.checkpoint)
    src_vocab = Vocab.load(args.src_vocab)
    tgt_vocab = Vocab.load(args.tgt_vocab)
    for line in _read_lines(args.input):
        if "\t" in line:
            src_text, tgt_text = line.split("\t", 1)
            src = src_vocab.encode(src_text.split())
        else:
            tgt_text = line
            src = None
            if model.config.context_mode != "none":
                raise TreeSeqError(
                    "this checkpoint conditions on a source; use 'src TAB tgt' lines"
                )
        tgt_words = tgt_text.split()
        tgt = tgt_vocab.encode(tgt_words)
        field, emission_lp = model.infer(src)
        grid = EmissionGrid.from_token_log_probs(emission_lp, tgt)
        result = best_tree_given_tokens(field, grid, len(tgt))
        out = render_tree(result.tree, tgt_words)
        if args.verbosity >= 1:
            out += f"\t{rescore_tree(field, grid, result)!r}"
        print(out)
    return 0


def _cmd_verify(args) -> int:
    results = run_all(max_depth=args.depth, seed=args.seed)
    width = max(len(r.name) for r in results)
    all_ok = True
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        all_ok &= r.passed
        print(f"[{mark}] {r.name:<{width}}  {r.detail}")
    return 0 if all_ok else 1


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code) if exc.code is not None else USAGE_ERROR
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "decode": _cmd_decode,
        "parse": _cmd_parse,
        "verify": _cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except TreeSeqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DOMAIN_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DOMAIN_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
