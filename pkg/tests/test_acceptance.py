"""Acceptance suite: one test per shipped guarantee, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the measured
numbers; the heavyweight checks (end-to-end training, the imbalance
comparison) dominate the runtime, which stays inside each check's stated
budget on one CPU core.
"""

import itertools
import json
import math
import os
import time

import numpy as np
import pytest

from polyavsr import tensor as T
from polyavsr.classifier import LanguageLabel, class_loss, predict_language
from polyavsr.config import RunConfig
from polyavsr.corpus import CorpusConfig, CorpusReader, make_splits
from polyavsr.decoder import CtcPrefixScorer, _score_sequence, beam_decode, \
    greedy_decode
from polyavsr.losses import attention_loss, balance_weights, ctc_grad, \
    ctc_loss, total_loss
from polyavsr.metrics import edit_distance
from polyavsr.model import build_model
from polyavsr.tensor import Tensor
from polyavsr.train import evaluate, model_from_checkpoint, train
from polyavsr.vocab import EOS


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f"  [{detail}]"
    print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def corpus3(tmp_path_factory):
    """Three languages, disjoint vocabularies, 600 train utterances."""
    root = str(tmp_path_factory.mktemp("accept") / "corpus3")
    make_splits(CorpusConfig(languages=3, train_total=600, seed=0), root)
    return root


@pytest.fixture(scope="module")
def e2e(corpus3, tmp_path_factory):
    """Full joint training run shared by the smoke/decoding/replay checks."""
    out = str(tmp_path_factory.mktemp("accept") / "e2e")
    cfg = RunConfig(corpus_dir=corpus3, out_dir=out, steps=5000, seed=0)
    t0 = time.monotonic()
    ckpt = train(cfg)
    train_s = time.monotonic() - t0
    reader = CorpusReader(corpus3)
    model, cfg2 = model_from_checkpoint(ckpt, reader)
    return {"ckpt": ckpt, "model": model, "cfg": cfg2, "reader": reader,
            "train_s": train_s}


# ------------------------------------------------- 1. CTC vs enumeration


def collapse(path, blank=0):
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def test_1_ctc_matches_alignment_enumeration():
    t_start = time.monotonic()
    worst = 0.0
    checked = 0
    rng = np.random.default_rng(7)
    for vocab_size in (2, 3, 4):
        for frames in range(1, 7):
            if vocab_size ** frames > 4096:
                continue
            logits = rng.normal(size=(frames, vocab_size))
            lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
            probs = np.exp(lp)
            mass: dict = {}
            for path in itertools.product(range(vocab_size), repeat=frames):
                p = 1.0
                for t, s in enumerate(path):
                    p *= probs[t, s]
                key = collapse(path)
                mass[key] = mass.get(key, 0.0) + p
            for tlen in range(0, 4):
                for target in itertools.product(range(1, vocab_size),
                                                repeat=tlen):
                    loss = float(ctc_loss(Tensor(lp), list(target)).data)
                    ref = mass.get(target, 0.0)
                    checked += 1
                    if ref == 0.0:
                        assert math.isinf(loss), (target, frames)
                    else:
                        worst = max(worst, abs(loss - (-math.log(ref))))
    elapsed = time.monotonic() - t_start
    report("ctc loss equals alignment-path enumeration",
           worst < 1e-9 and elapsed < 10.0,
           f"{checked} targets, worst gap {worst:.2e}, {elapsed:.1f}s")


# ------------------------------------------------------ 2. gradient suite


def test_2_gradient_suite(tmp_path):
    t_start = time.monotonic()
    rng = np.random.default_rng(3)

    # (a) analytic ctc gradient against central differences on the logits
    logits = rng.normal(size=(6, 6))
    target = [1, 2, 2]
    def lsm(z):
        return z - np.log(np.exp(z).sum(-1, keepdims=True))
    analytic = ctc_grad(lsm(logits), target)
    eps = 1e-5
    worst_a = 0.0
    for i in range(logits.shape[0]):
        for j in range(logits.shape[1]):
            up, dn = logits.copy(), logits.copy()
            up[i, j] += eps
            dn[i, j] -= eps
            fd = (float(ctc_loss(Tensor(lsm(up)), target).data)
                  - float(ctc_loss(Tensor(lsm(dn)), target).data)) / (2 * eps)
            ref = max(abs(fd), abs(analytic[i, j]), 1e-8)
            worst_a = max(worst_a, abs(fd - analytic[i, j]) / ref)

    # (b) attention loss through a projection
    w_att = Tensor(rng.normal(size=(5, 9)), requires_grad=True)
    feats = Tensor(rng.normal(size=(4, 5)))
    def att_fn():
        return attention_loss(T.log_softmax(T.matmul(feats, w_att), -1),
                              [5, 6, 7, 3])
    err_b = T.grad_check(att_fn, [w_att], eps=1e-5)

    # (c) classifier loss through the conv/pool stack
    from polyavsr.classifier import LanguageClassifier
    clf = LanguageClassifier(8, 3, rng, dtype=np.float64)
    e_av = Tensor(rng.normal(size=(10, 8)))
    def cls_fn():
        return class_loss(clf(e_av), LanguageLabel(1, "L1"))
    err_c = T.grad_check(cls_fn, list(clf.parameters()), eps=1e-5,
                         max_coords=120, rng=np.random.default_rng(0))

    # (d) the full weighted objective over a two-utterance batch
    root = str(tmp_path / "gradc")
    make_splits(CorpusConfig(languages=2, vocab_per_lang=3, train_total=4,
                             valid_per_lang=1, test_per_lang=1, min_tokens=2,
                             max_tokens=3, seed=5), root)
    reader = CorpusReader(root)
    cfg = RunConfig(corpus_dir=root, out_dir=str(tmp_path / "x"), d=8,
                    heads=2, enc_layers=1, dec_layers=1, n_prompts=1,
                    precision="float64")
    model = build_model(cfg, reader.config, reader.vocab)
    params = model.set_trainable(None)
    recs = reader.manifest("train")[:2]
    utts = [reader.load("train", r) for r in recs]
    labels = [LanguageLabel(u.lang_id, f"L{u.lang_id}") for u in utts]
    gammas = balance_weights(labels)

    def composite():
        from polyavsr.train import _seq_losses
        terms = []
        for utt, gamma in zip(utts, gammas):
            e = model.encode(utt.audio, utt.video)
            ctc, att = _seq_losses(model, e, utt.tokens, utt.lang_id,
                                   reader.vocab)
            cls = class_loss(model.classifier(e),
                             LanguageLabel(utt.lang_id, f"L{utt.lang_id}"))
            terms.append(total_loss(ctc, att, cls, float(gamma),
                                    cfg.alpha, cfg.beta))
        return (terms[0] + terms[1]) * 0.5

    err_d = T.grad_check(composite, params, eps=1e-5, max_coords=150,
                         rng=np.random.default_rng(1))
    reader.close()

    elapsed = time.monotonic() - t_start
    worst = max(worst_a, err_b, err_c, err_d)
    report("gradient checks across every loss head",
           worst < 1e-4 and elapsed < 120.0,
           f"ctc {worst_a:.1e} att {err_b:.1e} cls {err_c:.1e} "
           f"joint {err_d:.1e}, {elapsed:.0f}s")


# ------------------------------------------- 3. prompt embedding features


def test_3_prompt_feature_shapes_and_gradients(corpus3, tmp_path):
    reader = CorpusReader(corpus3)
    utt = reader.load("test", reader.manifest("test")[0])
    frames = utt.video.shape[0]
    results = []
    for n in (0, 1, 4, 16):
        cfg = RunConfig(corpus_dir=corpus3, out_dir=str(tmp_path / f"n{n}"),
                        n_prompts=n, precision="float64")
        model = build_model(cfg, reader.config, reader.vocab)
        model.set_trainable(None)
        e_av = model.encode(utt.audio, utt.video)
        shape_ok = e_av.data.shape == (n + frames, cfg.d)
        results.append(shape_ok)
        if n == 0:
            plain = model.encode_promptless(utt.audio, utt.video)
            results.append(np.array_equal(e_av.data, plain.data))
        else:
            for p in model.prompts.parameters():
                p.grad = None
            T.backward(T.reduce_sum(e_av * e_av))
            grads_ok = all(
                p.grad is not None and float(np.abs(p.grad).max()) > 0
                for p in model.prompts.parameters())
            n_banks = len(list(model.prompts.parameters()))
            results.append(grads_ok and n_banks == cfg.enc_layers)
    reader.close()
    report("prompt features keep (n+T, d) shape, collapse bitwise at n=0, "
           "and pass gradients to every layer's prompts",
           all(results), f"{len(results)} checks")


# ------------------------------------------------ 4. balancing arithmetic


def test_4_balancing_arithmetic(tmp_path):
    a, b = LanguageLabel(0, "A"), LanguageLabel(1, "B")
    got = balance_weights([a, a, a, b])  # one weight per sample
    skew_ok = (np.max(np.abs(got[:3] - math.sqrt(4.0 / 3.0))) < 1e-12 and
               abs(got[3] - 2.0) < 1e-12 and
               abs(got[0] - 1.1547005383792515) < 1e-12)
    same = balance_weights([a, a, a, a])  # r=1 for every sample
    uniform_ok = (same == 1.0).all()
    spread = balance_weights([a, b, LanguageLabel(2, "C")])
    uniform_ok = uniform_ok and np.max(
        np.abs(spread - math.sqrt(3.0))) < 1e-12

    # toggling the weighting on a one-language corpus must replay identically
    root = str(tmp_path / "mono")
    make_splits(CorpusConfig(languages=1, vocab_per_lang=3, train_total=4,
                             valid_per_lang=1, test_per_lang=1, min_tokens=2,
                             max_tokens=3, seed=9), root)
    logs = []
    for name, flag in (("on", True), ("off", False)):
        out = str(tmp_path / name)
        train(RunConfig(corpus_dir=root, out_dir=out, d=8, heads=2,
                        enc_layers=1, dec_layers=1, n_prompts=1, steps=8,
                        batch_size=2, log_interval=1, precision="float64",
                        balance=flag, seed=2))
        with open(os.path.join(out, "metrics.jsonl")) as fh:
            rows = [json.loads(ln) for ln in fh]
        logs.append([[r[k] for k in ("loss_total", "loss_ctc", "loss_att",
                                     "loss_cls")] for r in rows])
    replay_ok = logs[0] == logs[1]
    report("per-language weights match the inverse-root batch shares",
           skew_ok and uniform_ok and replay_ok,
           f"skew ({got[0]:.13f}, {got[3]:.1f}), replay match {replay_ok}")


# --------------------------------------------- 5. language identification


def test_5_language_id_learnable(corpus3, tmp_path):
    t_start = time.monotonic()
    reader = CorpusReader(corpus3)

    cfg_u = RunConfig(corpus_dir=corpus3, out_dir=str(tmp_path / "u"), seed=0)
    untrained = build_model(cfg_u, reader.config, reader.vocab)
    acc_untrained = evaluate(untrained, cfg_u, reader, "test").language_accuracy

    out = str(tmp_path / "langid")
    cfg = RunConfig(corpus_dir=corpus3, out_dir=out, steps=2000,
                    classifier_warmup_steps=2000, seed=0)
    ckpt = train(cfg)
    model, cfg2 = model_from_checkpoint(ckpt, reader)
    acc = evaluate(model, cfg2, reader, "test").language_accuracy
    reader.close()

    elapsed = time.monotonic() - t_start
    report("language identity is learnable from prompts plus classifier",
           acc >= 0.95 and abs(acc_untrained - 1 / 3) <= 0.15
           and elapsed < 600.0,
           f"held-out acc {acc:.3f}, untrained {acc_untrained:.3f}, "
           f"{elapsed:.0f}s")


# ----------------------------------------------------- 6. end-to-end smoke


def test_6_end_to_end_recognition(e2e, tmp_path):
    t_start = time.monotonic()
    model, cfg, reader = e2e["model"], e2e["cfg"], e2e["reader"]

    clean = evaluate(model, cfg, reader, "test")
    noisy = evaluate(model, cfg, reader, "test", noise_snr_db=0.0,
                     eval_seed=123)
    fresh = build_model(cfg, reader.config, reader.vocab)
    baseline = evaluate(fresh, cfg, reader, "test")

    clean_ok = clean.average_wer <= 0.30
    base_ok = baseline.average_wer >= 0.9
    below_ok = clean.average_wer < baseline.average_wer
    order_ok = all(noisy.per_language_wer[k] >= clean.per_language_wer[k]
                   for k in clean.per_language_wer)
    elapsed = e2e["train_s"] + (time.monotonic() - t_start)
    report("joint training reaches low clean WER and degrades under noise",
           clean_ok and base_ok and below_ok and order_ok and elapsed < 1800,
           f"clean {clean.average_wer:.3f}, noisy {noisy.average_wer:.3f}, "
           f"untrained {baseline.average_wer:.2f}, total {elapsed:.0f}s")


# --------------------------------------------------- 7. imbalance remedy


def test_7_balancing_helps_minority_language(tmp_path):
    root = str(tmp_path / "imb")
    make_splits(CorpusConfig(languages=3, train_total=600,
                             ratios=[0.6, 0.3, 0.1], seed=0), root)
    reader = CorpusReader(root)
    minority = 2  # 10% share
    pairs = []
    for seed in (0, 1, 2):
        row = {}
        for flag in (True, False):
            out = str(tmp_path / f"s{seed}_{int(flag)}")
            cfg = RunConfig(corpus_dir=root, out_dir=out, steps=1500,
                            seed=seed, balance=flag)
            model, cfg2 = model_from_checkpoint(train(cfg), reader)
            rep = evaluate(model, cfg2, reader, "test")
            row[flag] = rep.per_language_wer[minority]
        pairs.append(row)
    reader.close()
    wins = sum(1 for row in pairs if row[True] <= row[False])
    detail = "; ".join(
        f"seed {s}: weighted {row[True]:.3f} vs plain {row[False]:.3f}"
        for s, row in enumerate(pairs))
    report("loss weighting protects the minority language on skewed data",
           wins >= 2, f"{wins}/3 seeds, {detail}")


# ------------------------------------------------------- 8. determinism


def test_8_determinism_and_round_trip(e2e, tmp_path):
    root = str(tmp_path / "det")
    make_splits(CorpusConfig(languages=2, vocab_per_lang=3, train_total=6,
                             valid_per_lang=1, test_per_lang=1, min_tokens=2,
                             max_tokens=3, seed=4), root)
    logs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        train(RunConfig(corpus_dir=root, out_dir=out, d=8, heads=2,
                        enc_layers=1, dec_layers=1, n_prompts=1, steps=10,
                        batch_size=2, log_interval=1, precision="float64",
                        seed=6))
        with open(os.path.join(out, "metrics.jsonl")) as fh:
            rows = [json.loads(ln) for ln in fh]
        logs.append([[r[k] for k in ("loss_total", "loss_ctc", "loss_att",
                                     "loss_cls", "lang_acc", "lr")]
                     for r in rows])
    replay_ok = logs[0] == logs[1]

    reader, cfg = e2e["reader"], e2e["cfg"]
    rows_a: list = []
    rows_b: list = []
    m1, c1 = model_from_checkpoint(e2e["ckpt"], reader)
    evaluate(m1, c1, reader, "test", decode_rows=rows_a)
    m2, c2 = model_from_checkpoint(e2e["ckpt"], reader)
    evaluate(m2, c2, reader, "test", decode_rows=rows_b)
    trip_ok = ([(r["utt_id"], r["hyp"], r["pred_lang"]) for r in rows_a] ==
               [(r["utt_id"], r["hyp"], r["pred_lang"]) for r in rows_b])
    report("reruns replay exactly and checkpoints round-trip",
           replay_ok and trip_ok,
           f"log replay {replay_ok}, round-trip {trip_ok}")


# ------------------------------------------------- 9. decoding contracts


def quadratic_dp(ref, hyp):
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1,
                          d[i - 1, j - 1] + cost)
    return int(d[n, m])


def test_9_decoding_contracts(e2e):
    model, cfg, reader = e2e["model"], e2e["cfg"], e2e["reader"]
    vocab = reader.vocab
    model.eval()
    greedy_match = True
    beam_dominates = True
    for rec in reader.manifest("test"):
        utt = reader.load("test", rec)
        with T.no_grad():
            e_av = model.encode(utt.audio, utt.video)
            lang = predict_language(model.classifier(e_av)).id
            ctc_lp = model.ctc_log_probs(e_av).data
        greedy = greedy_decode(model.decoder, e_av, lang, cfg.max_decode_len)
        b1 = beam_decode(model.decoder, e_av, ctc_lp, lang, beam=1,
                         lambda_ctc=0.0, max_len=cfg.max_decode_len)
        if b1.tokens != greedy:
            greedy_match = False
        b4 = beam_decode(model.decoder, e_av, ctc_lp, lang, beam=4,
                         lambda_ctc=cfg.lambda_ctc,
                         max_len=cfg.max_decode_len)
        g_scored = _score_sequence(model.decoder, e_av, lang, greedy,
                                   CtcPrefixScorer(ctc_lp), cfg.lambda_ctc)
        if b4.joint < g_scored.joint:
            beam_dominates = False
    model.train()

    rng = np.random.default_rng(41)
    oracle_ok = True
    for _ in range(1000):
        ref = rng.integers(0, 8, size=int(rng.integers(1, 11))).tolist()
        hyp = rng.integers(0, 8, size=int(rng.integers(0, 11))).tolist()
        if edit_distance(ref, hyp) != quadratic_dp(ref, hyp):
            oracle_ok = False
            break
    report("decoding honors the greedy and beam-dominance contracts",
           greedy_match and beam_dominates and oracle_ok,
           f"beam1==greedy {greedy_match}, beam4>=greedy {beam_dominates}, "
           f"edit-distance oracle {oracle_ok}")
