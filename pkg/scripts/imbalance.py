#!/usr/bin/env python3
"""Skewed-data comparison: loss weighting on vs off over matched seeds.

Trains two runs per seed on a 60/30/10 corpus and prints per-language
held-out WER for both, highlighting the minority language (the 10% one).
"""

import argparse
import json
import os
import sys

from polyavsr.cli import _pin_threads

_pin_threads()

from polyavsr.config import RunConfig                      # noqa: E402
from polyavsr.corpus import CorpusConfig, CorpusReader, make_splits  # noqa: E402
from polyavsr.metrics import format_table                  # noqa: E402
from polyavsr.train import evaluate, model_from_checkpoint, train  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/imbalance")
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--ratios", default="0.6,0.3,0.1")
    ap.add_argument("--train-total", type=int, default=600)
    args = ap.parse_args()

    ratios = [float(x) for x in args.ratios.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    minority = min(range(len(ratios)), key=lambda i: ratios[i])

    corpus = os.path.join(args.root, "corpus")
    if not os.path.exists(os.path.join(corpus, "corpus.json")):
        make_splits(CorpusConfig(languages=len(ratios), ratios=ratios,
                                 train_total=args.train_total, seed=0),
                    corpus)
    reader = CorpusReader(corpus)

    table = {}
    rows = []
    for seed in seeds:
        pair = {}
        for flag, tag in ((True, "weighted"), (False, "plain")):
            out = os.path.join(args.root, f"s{seed}_{tag}")
            cfg = RunConfig(corpus_dir=corpus, out_dir=out, steps=args.steps,
                            seed=seed, balance=flag)
            ckpt = train(cfg)
            model, cfg2 = model_from_checkpoint(ckpt, reader)
            rep = evaluate(model, cfg2, reader, "test")
            table[f"seed{seed}/{tag}"] = rep.per_language_wer
            pair[tag] = rep.per_language_wer[minority]
            print(f"seed {seed} {tag}: "
                  f"{json.dumps({k: round(v, 4) for k, v in rep.per_language_wer.items()})}",
                  flush=True)
        rows.append((seed, pair["weighted"], pair["plain"]))
    reader.close()

    print()
    print(format_table(table, sorted(range(len(ratios)))))
    print()
    wins = 0
    for seed, w, p in rows:
        mark = "<=" if w <= p else "> "
        wins += w <= p
        print(f"seed {seed}: minority L{minority} weighted {w:.4f} {mark} plain {p:.4f}")
    print(f"weighted run at least as good on {wins}/{len(rows)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
