"""Command-line entry point: corpus-gen | train | eval | decode | inspect.

Thread control happens before numpy loads: POLYAVSR_THREADS (default 1)
is copied into the BLAS thread-count environment variables, so runs stay
deterministic unless the user opts into parallel kernels.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _pin_threads() -> None:
    count = os.environ.get("POLYAVSR_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, count)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of RunConfig fields")
    p.add_argument("--corpus", dest="corpus_dir", help="corpus directory")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--n-prompts", dest="n_prompts", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--dec-layers", dest="dec_layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--beam", type=int)
    p.add_argument("--lambda-ctc", dest="lambda_ctc", type=float)
    p.add_argument("--max-decode-len", dest="max_decode_len", type=int)
    p.add_argument("--classifier-warmup-steps", dest="classifier_warmup_steps",
                   type=int)
    p.add_argument("--freeze-backbone", dest="freeze_backbone",
                   action="store_const", const=True, default=None)
    p.add_argument("--no-balance", dest="balance", action="store_const",
                   const=False, default=None)
    p.add_argument("--train-noise-snr-db", dest="train_noise_snr_db", type=float)


def _run_config(args: argparse.Namespace):
    from .config import RunConfig
    overrides = {k: v for k, v in vars(args).items()
                 if k in RunConfig.field_names()}
    return RunConfig.load(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyavsr",
        description="multilingual audio-visual speech recognition sandbox")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("corpus-gen", help="generate a synthetic corpus")
    gen.add_argument("--out", required=True, help="corpus output directory")
    gen.add_argument("--languages", type=int, default=3)
    gen.add_argument("--vocab-per-lang", dest="vocab_per_lang", type=int,
                     default=10)
    gen.add_argument("--overlap-fraction", dest="overlap_fraction", type=float,
                     default=0.0)
    gen.add_argument("--train-total", dest="train_total", type=int, default=600)
    gen.add_argument("--ratios", help="comma-separated per-language fractions")
    gen.add_argument("--valid-per-lang", dest="valid_per_lang", type=int,
                     default=20)
    gen.add_argument("--test-per-lang", dest="test_per_lang", type=int,
                     default=20)
    gen.add_argument("--min-tokens", dest="min_tokens", type=int, default=3)
    gen.add_argument("--max-tokens", dest="max_tokens", type=int, default=8)
    gen.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="train a model on a generated corpus")
    _add_config_flags(tr)
    tr.add_argument("--progress", action="store_true")

    ev = sub.add_parser("eval", help="decode a split and report WER")
    _add_config_flags(ev)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--noise-snr-db", dest="noise_snr_db", type=float)
    ev.add_argument("--report", help="where to write the JSON report")

    de = sub.add_parser("decode", help="dump per-utterance hypotheses as JSONL")
    _add_config_flags(de)
    de.add_argument("--ckpt", required=True)
    de.add_argument("--split", default="test")
    de.add_argument("--noise-snr-db", dest="noise_snr_db", type=float)
    de.add_argument("--hyp-out", dest="hyp_out", required=True)

    ins = sub.add_parser("inspect", help="print corpus statistics")
    ins.add_argument("--corpus", dest="corpus_dir", required=True)
    return parser


def cmd_corpus_gen(args) -> int:
    from .corpus import CorpusConfig, make_splits
    ratios = None
    if args.ratios:
        ratios = [float(x) for x in args.ratios.split(",")]
    cfg = CorpusConfig(
        languages=args.languages, vocab_per_lang=args.vocab_per_lang,
        overlap_fraction=args.overlap_fraction, train_total=args.train_total,
        ratios=ratios, valid_per_lang=args.valid_per_lang,
        test_per_lang=args.test_per_lang, min_tokens=args.min_tokens,
        max_tokens=args.max_tokens, seed=args.seed)
    manifests = make_splits(cfg, args.out)
    for split, recs in manifests.items():
        print(f"{split}: {len(recs)} utterances")
    print(f"wrote corpus to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import train
    cfg = _run_config(args)
    final = train(cfg, progress=args.progress)
    print(f"final checkpoint: {final}")
    return 0


def _load_for_eval(args):
    from .corpus import CorpusReader
    from .train import model_from_checkpoint
    cfg = _run_config(args)
    reader = CorpusReader(cfg.corpus_dir)
    model, saved_cfg = model_from_checkpoint(args.ckpt, reader)
    # decode settings come from the current flags, not the checkpoint
    saved_cfg.beam = cfg.beam
    saved_cfg.lambda_ctc = cfg.lambda_ctc
    saved_cfg.max_decode_len = cfg.max_decode_len
    return model, saved_cfg, reader


def cmd_eval(args) -> int:
    from .metrics import format_table
    from .train import evaluate
    model, cfg, reader = _load_for_eval(args)
    report = evaluate(model, cfg, reader, split=args.split,
                      noise_snr_db=args.noise_snr_db)
    langs = sorted(report.per_language_wer)
    print(format_table({args.split: report.per_language_wer}, langs))
    print(f"language accuracy: {report.language_accuracy:.4f}")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json() + "\n")
        print(f"report written to {args.report}")
    return 0


def cmd_decode(args) -> int:
    from .train import evaluate
    model, cfg, reader = _load_for_eval(args)
    rows: list = []
    report = evaluate(model, cfg, reader, split=args.split,
                      noise_snr_db=args.noise_snr_db, decode_rows=rows)
    with open(args.hyp_out, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} hypotheses to {args.hyp_out} "
          f"(avg WER {report.average_wer:.4f})")
    return 0


def cmd_inspect(args) -> int:
    from .corpus import CorpusReader
    reader = CorpusReader(args.corpus_dir)
    cfg = reader.config
    print(f"corpus {args.corpus_dir}: {cfg.languages} languages, "
          f"vocab {reader.vocab.size} (content {len(list(reader.vocab.content_ids))})")
    for split in ("train", "valid", "test"):
        try:
            recs = reader.manifest(split)
        except Exception:
            continue
        by_lang: dict = {}
        tok_counts = []
        for r in recs:
            by_lang[r["lang"]] = by_lang.get(r["lang"], 0) + 1
            tok_counts.append(len(r["tokens"]))
        counts = ", ".join(f"L{k}={v}" for k, v in sorted(by_lang.items()))
        print(f"  {split}: {len(recs)} utts ({counts}), "
              f"tokens/utt min {min(tok_counts)} max {max(tok_counts)} "
              f"mean {sum(tok_counts)/len(tok_counts):.2f}")
    return 0


def main(argv=None) -> int:
    _pin_threads()
    args = build_parser().parse_args(argv)
    handlers = {"corpus-gen": cmd_corpus_gen, "train": cmd_train,
                "eval": cmd_eval, "decode": cmd_decode, "inspect": cmd_inspect}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
