"""Command-line interface for the whole pipeline.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 training
divergence. Results go to stdout, diagnostics to stderr. Every run writes a
manifest (config + seeds + input fingerprints) next to its outputs, and an
output directory is guarded by a lock file against concurrent invocations.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

import torch

from . import evaluation, trainer
from .corpus import (CorpusFormatError, load_bpe, load_corpus, save_bpe,
                     train_bpe, vocab_overlap)
from .model import DivergenceError, CheckpointError, load_checkpoint
from .synthlang import PROFILES, gen_suite
from .util import sha256_file

log = logging.getLogger("selfmt")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


@contextlib.contextmanager
def _locked_out_dir(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CorpusFormatError(
            f"{out_dir} is locked by another run (remove {lock_path} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(lock_path)


def _write_run_manifest(out_dir, args, inputs: list) -> None:
    payload = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "inputs": {str(p): sha256_file(p) for p in inputs if p and os.path.isfile(p)},
    }
    with open(os.path.join(out_dir, "cli_manifest.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _apply_threads(args) -> None:
    threads = getattr(args, "threads", "1")
    if threads != "auto":
        torch.set_num_threads(int(threads))


def cmd_make_synth(args) -> int:
    with _locked_out_dir(args.out):
        manifest = gen_suite(args.profile, args.langs, args.seed, args.out)
        _write_run_manifest(args.out, args, [])
    print(json.dumps({"out": args.out, "files": len(manifest["files"])}))
    return EXIT_OK


def cmd_train_bpe(args) -> int:
    sentences = []
    for path in args.corpus:
        loaded = load_corpus(path, "monolingual")
        sentences.extend(loaded)
    model = train_bpe(sentences, args.merges, extra_langs=args.langs.split(",") if args.langs else None)
    save_bpe(model, args.out)
    print(json.dumps({"merges": len(model.merges), "vocab": len(model), "out": args.out}))
    return EXIT_OK


def cmd_vocab_overlap(args) -> int:
    c1 = load_corpus(args.corpus[0], "monolingual")
    c2 = load_corpus(args.corpus[1], "monolingual")
    print(f"{vocab_overlap(c1, c2):.2f}")
    return EXIT_OK


def cmd_run(args) -> int:
    with _locked_out_dir(args.out):
        trainer.run_experiment(args.manifest, args.out)
        _write_run_manifest(args.out, args, [args.manifest])
    print(json.dumps({"out": args.out}))
    return EXIT_OK


def _single_run_manifest(args) -> dict:
    manifest = {
        "corpus": {"dir": args.corpus},
        "langs": args.langs.split(",") if args.langs else None,
        "bpe_merges": args.bpe_merges,
        "grid": {"techniques": [args.techniques], "inits": [args.init],
                 "seeds": [args.seed]},
        "train": {
            "max_epochs": args.epochs, "patience": args.patience,
            "batch_size": args.batch_size, "max_len": args.max_len,
            "max_out_len": args.max_out_len,
        },
        "model": json.loads(args.model_json) if args.model_json else {},
    }
    if args.finetune_pair:
        manifest["finetune"] = {"pair": args.finetune_pair.split(","),
                                "max_epochs": args.finetune_epochs}
    return {k: v for k, v in manifest.items() if v is not None}


def cmd_train(args) -> int:
    trainer.TechniqueSet.parse(args.techniques)  # validate before touching data
    if args.init not in trainer.INIT_MODES:
        raise trainer.ConfigError(f"unknown init {args.init!r}")
    manifest = _single_run_manifest(args)
    with _locked_out_dir(args.out):
        manifest_path = os.path.join(args.out, "manifest.json")
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        trainer.run_experiment(manifest_path, args.out)
        _write_run_manifest(args.out, args, [manifest_path])
    print(json.dumps({"out": args.out}))
    return EXIT_OK


def cmd_translate(args) -> int:
    state = load_checkpoint(args.model)
    bpe = load_bpe(args.bpe_model)
    lines = [line.rstrip("\n") for line in (open(args.input) if args.input else sys.stdin)]
    cfg = trainer.TrainConfig(languages=[args.src_lang, args.tgt_lang])
    token_seqs = [bpe.encode(line) for line in lines]
    hyps = trainer.translate_texts(state, bpe, token_seqs, args.src_lang,
                                   args.tgt_lang, cfg)
    for hyp in hyps:
        print(hyp)
    return EXIT_OK


def cmd_mine(args) -> int:
    state = load_checkpoint(args.model)
    bpe = load_bpe(args.bpe_model)
    langs = args.langs.split(",")
    data = trainer.load_suite_data(args.corpus, bpe, langs, args.max_len)
    margin = trainer.MarginConfig(k=args.k)
    out = sys.stdout if not args.out_file else open(args.out_file, "w", encoding="utf-8")
    triples = []
    try:
        for doc_id, i, j, decision, sx, sy in trainer.mine_corpus(
                state, data, (langs[0], langs[1]), margin):
            triples.append((doc_id, i, j))
            scores = "\t".join(f"{s:.6f}" for s in decision.scores)
            out.write(f"{scores}\t{bpe.decode(sx.tokens)}\t{bpe.decode(sy.tokens)}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.gold:
        from .synthlang import GoldAlignment
        prf = evaluation.extraction_prf(triples, GoldAlignment.load(args.gold))
        print(json.dumps({"precision": round(prf.precision, 4),
                          "recall": round(prf.recall, 4),
                          "f1": round(prf.f1, 4),
                          "n_accepted": prf.n_accepted, "n_gold": prf.n_gold}),
              file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    hyps = [line.rstrip("\n") for line in open(args.hyp, encoding="utf-8")]
    refs = [line.rstrip("\n") for line in open(args.ref, encoding="utf-8")]
    result = evaluation.bleu(hyps, refs)
    payload = {"bleu": round(result.score, 4),
               "precisions": [round(p, 6) for p in result.precisions],
               "brevity_penalty": round(result.brevity_penalty, 6)}
    if len(hyps) >= 2 and args.bootstrap:
        lo, hi = evaluation.bootstrap_ci(hyps, refs, n_resamples=args.bootstrap,
                                         seed=args.seed)
        payload["ci_low"], payload["ci_high"] = round(lo, 4), round(hi, 4)
    print(json.dumps(payload))
    return EXIT_OK


def cmd_report(args) -> int:
    rows = trainer.read_stats_csv(args.stats)
    for row in rows:
        print("\t".join(str(row[c]) for c in trainer.STATS_COLUMNS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfmt",
                                     description="Self-supervised NMT on comparable corpora")
    parser.add_argument("--threads", default="1", help="torch threads: integer or 'auto'")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="generate a synthetic cipher-language suite")
    p.add_argument("--profile", choices=sorted(PROFILES), default="tiny")
    p.add_argument("--langs", type=int, default=2, help="number of languages")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synth)

    p = sub.add_parser("train-bpe", help="learn a joint BPE model")
    p.add_argument("--corpus", nargs="+", required=True, help="JSONL corpora")
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--langs", default=None, help="comma-separated tag languages")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("vocab-overlap", help="pre-BPE vocabulary overlap of two corpora")
    p.add_argument("--corpus", nargs=2, required=True)
    p.set_defaults(func=cmd_vocab_overlap)

    p = sub.add_parser("run", help="run an experiment manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="single training run")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--langs", default=None, help="comma-separated languages")
    p.add_argument("--techniques", default="B")
    p.add_argument("--init", default="none", help="none|we|dae|mdae")
    p.add_argument("--bpe-merges", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--max-out-len", type=int, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-json", default=None, help="JSON dict of model overrides")
    p.add_argument("--finetune-pair", default=None)
    p.add_argument("--finetune-epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate stdin (or --input) line by line")
    p.add_argument("--model", required=True)
    p.add_argument("--bpe-model", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--input", default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("mine", help="emit accepted pairs as scored TSV")
    p.add_argument("--model", required=True)
    p.add_argument("--bpe-model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--langs", required=True, help="pair, e.g. a,b")
    p.add_argument("--gold", default=None, help="gold alignment JSONL; prints P/R to stderr")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--out-file", default=None)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("evaluate", help="BLEU (+CI) for hypothesis/reference files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="dump a stats CSV as TSV")
    p.add_argument("--stats", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_threads(args)
        return args.func(args)
    except (CorpusFormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (trainer.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
