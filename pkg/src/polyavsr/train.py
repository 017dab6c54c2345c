"""Training loop and evaluation driver.

Per step: draw a batch, compute the balancing weight per sample from the
within-batch language mix, run all three objectives per sample, and take
the batch mean of the weighted sums. Samples whose transcript cannot be
aligned to the available frames (infinite CTC loss) are skipped and
counted. An optional warmup phase trains only the prompts and the
language classifier on the classification objective.
"""

from __future__ import annotations

import json
import os
import time
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .classifier import LanguageLabel, class_loss, predict_language
from .config import RunConfig
from .corpus import CorpusConfig, CorpusReader, inject_noise
from .decoder import beam_decode, greedy_decode
from .errors import CompatibilityError, ConfigurationError, DegenerateBatchError
from .losses import attention_loss, balance_weights, ctc_loss, total_loss
from .metrics import MetricReport, corpus_wer
from .model import AvsrModel, build_model
from .optim import Adam
from .tensor import Tensor
from .vocab import EOS, SOS, Vocab


def _hyperparams(cfg: RunConfig, corpus_cfg: CorpusConfig) -> dict:
    return {"run": json.loads(cfg.to_json()),
            "corpus": {k: v for k, v in vars(corpus_cfg).items()}}


def model_from_checkpoint(path: str, corpus: CorpusReader) -> tuple:
    header, entries = load_checkpoint(path)
    hp = header["hyperparams"]
    cfg = RunConfig(**hp["run"])
    saved_corpus = CorpusConfig(**hp["corpus"])
    if saved_corpus.languages != corpus.config.languages:
        raise CompatibilityError(
            f"checkpoint trained with {saved_corpus.languages} languages, "
            f"corpus has {corpus.config.languages}")
    model = build_model(cfg, corpus.config, corpus.vocab)
    if corpus.vocab.size != model.decoder.vocab.size:
        raise CompatibilityError("vocabulary size mismatch")
    restore_model(model, entries)
    return model, cfg


def _seq_losses(model: AvsrModel, e_av, tokens: List[int], lang: int,
                vocab: Vocab):
    """CTC and teacher-forced attention losses for one encoded utterance."""
    ctc = ctc_loss(model.ctc_log_probs(e_av), tokens)
    prefix = [SOS, vocab.lang_id(lang)] + tokens
    step_lp = model.decoder(prefix, e_av)[1:]
    att = attention_loss(step_lp, tokens + [EOS])
    return ctc, att


def train(cfg: RunConfig, progress: bool = False) -> str:
    """Run the full loop; returns the final checkpoint path."""
    reader = CorpusReader(cfg.corpus_dir)
    vocab = reader.vocab
    model = build_model(cfg, reader.config, vocab)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")

    records = reader.manifest("train")
    if not records:
        raise DegenerateBatchError("training split is empty")
    rng = np.random.default_rng(cfg.seed + 101)
    noise_rng = np.random.default_rng(cfg.seed + 202)

    warmup_steps = cfg.classifier_warmup_steps
    if warmup_steps:
        warm_params = model.set_trainable(("prompts", "classifier"))
        opt = Adam(warm_params, lr=cfg.lr)
    else:
        opt = _main_optimizer(model, cfg)

    metrics_path = os.path.join(cfg.out_dir, "metrics.jsonl")
    skipped = 0
    t0 = time.time()
    with open(metrics_path, "w") as log:
        for step in range(cfg.steps):
            if warmup_steps and step == warmup_steps:
                opt = _main_optimizer(model, cfg)
            in_warmup = step < warmup_steps
            ramp = max(1, int(round(cfg.warmup_frac * cfg.steps)))
            opt.lr = cfg.lr * min(1.0, (step + 1) / ramp)

            idx = rng.integers(0, len(records), size=cfg.batch_size)
            batch = [records[int(i)] for i in idx]
            labels = [LanguageLabel(r["lang"], f"L{r['lang']}") for r in batch]
            gammas = (balance_weights(labels) if cfg.balance
                      else np.ones(len(batch)))

            utts = []
            e_avs = []
            for rec in batch:
                utt = reader.load("train", rec)
                audio = utt.audio
                if cfg.train_noise_snr_db is not None:
                    audio = inject_noise(audio, cfg.train_noise_snr_db, noise_rng)
                utts.append(utt)
                e_avs.append(model.encode(audio, utt.video))
            # one batch-wide classifier pass so the normalization statistics
            # match what the running averages will see at evaluation time
            logits_batch = model.classifier.forward_batch(e_avs)

            totals: List[Tensor] = []
            sums = {"ctc": 0.0, "att": 0.0, "cls": 0.0}
            correct = 0
            for i, (utt, gamma) in enumerate(zip(utts, gammas)):
                logits = logits_batch[i]
                cls = class_loss(logits, LanguageLabel(utt.lang_id,
                                                       f"L{utt.lang_id}"))
                correct += int(predict_language(logits).id == utt.lang_id)
                if in_warmup:
                    totals.append(cls * (cfg.beta * float(gamma)))
                    sums["cls"] += float(cls.data)
                    continue
                ctc, att = _seq_losses(model, e_avs[i], utt.tokens,
                                       utt.lang_id, vocab)
                if not np.isfinite(float(ctc.data)):
                    skipped += 1
                    continue
                totals.append(total_loss(ctc, att, cls, float(gamma),
                                         cfg.alpha, cfg.beta))
                sums["ctc"] += float(ctc.data)
                sums["att"] += float(att.data)
                sums["cls"] += float(cls.data)

            if not totals:
                continue
            batch_loss = totals[0]
            for t in totals[1:]:
                batch_loss = batch_loss + t
            batch_loss = batch_loss * (1.0 / len(totals))
            opt.zero_grad()
            T.backward(batch_loss)
            opt.step()

            if step % cfg.log_interval == 0 or step == cfg.steps - 1:
                kept = len(totals)
                row = {"step": step, "loss_total": float(batch_loss.data),
                       "loss_ctc": sums["ctc"] / kept,
                       "loss_att": sums["att"] / kept,
                       "loss_cls": sums["cls"] / kept,
                       "lang_acc": correct / len(batch),
                       "lr": opt.lr, "skipped": skipped,
                       "elapsed_s": round(time.time() - t0, 2)}
                log.write(json.dumps(row, sort_keys=True) + "\n")
                log.flush()
                if progress:
                    print(f"step {step} total {row['loss_total']:.4f} "
                          f"cls {row['loss_cls']:.4f} acc {row['lang_acc']:.2f}",
                          flush=True)
            if cfg.checkpoint_interval and step and \
                    step % cfg.checkpoint_interval == 0:
                save_checkpoint(os.path.join(cfg.out_dir, f"step{step}.ckpt"),
                                model, _hyperparams(cfg, reader.config))

    final = os.path.join(cfg.out_dir, "final.ckpt")
    save_checkpoint(final, model, _hyperparams(cfg, reader.config))
    reader.close()
    return final


def _main_optimizer(model: AvsrModel, cfg: RunConfig) -> Adam:
    if cfg.freeze_backbone:
        groups = ("prompts", "classifier", "decoder", "ctc_head")
        params = model.set_trainable(groups)
    else:
        params = model.set_trainable(None)
    return Adam(params, lr=cfg.lr)


def evaluate(model: AvsrModel, cfg: RunConfig, reader: CorpusReader,
             split: str = "test", noise_snr_db: Optional[float] = None,
             eval_seed: int = 0, use_oracle_lang: bool = False,
             decode_rows: Optional[list] = None) -> MetricReport:
    """Decode one split; corpus-level WER per language plus language accuracy."""
    vocab = reader.vocab
    model.eval()
    rows: List[dict] = []
    lang_hits = 0
    noise_rng = np.random.default_rng(eval_seed + 7)
    for rec in reader.manifest(split):
        utt = reader.load(split, rec)
        audio = utt.audio
        if noise_snr_db is not None:
            audio = inject_noise(audio, noise_snr_db, noise_rng)
        with T.no_grad():
            e_av = model.encode(audio, utt.video)
            logits = model.classifier(e_av)
            pred = predict_language(logits)
            lang_hits += int(pred.id == utt.lang_id)
            lang_for_decode = utt.lang_id if use_oracle_lang else pred.id
            ctc_lp = model.ctc_log_probs(e_av).data
            if cfg.beam == 1 and cfg.lambda_ctc == 0.0:
                hyp_tokens = greedy_decode(model.decoder, e_av, lang_for_decode,
                                           cfg.max_decode_len)
                att = ctc = joint = 0.0
            else:
                hyp = beam_decode(model.decoder, e_av, ctc_lp, lang_for_decode,
                                  cfg.beam, cfg.lambda_ctc, cfg.max_decode_len)
                hyp_tokens = hyp.tokens
                att, ctc, joint = hyp.att_score, hyp.ctc_score, hyp.joint
        row = {"utt_id": utt.utt_id, "lang": utt.lang_id,
               "pred_lang": pred.id, "ref": utt.tokens, "hyp": hyp_tokens,
               "att_score": att, "ctc_score": ctc, "joint": joint}
        rows.append(row)
        if decode_rows is not None:
            decode_rows.append(row)
    per_lang = corpus_wer(rows)
    report = MetricReport(per_language_wer=per_lang,
                          language_accuracy=lang_hits / len(rows),
                          skipped=0, utterances=len(rows))
    model.train()
    return report
