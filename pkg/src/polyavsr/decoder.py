"""Autoregressive transformer decoder plus greedy and joint beam search.

Beam search is length-synchronous: every surviving hypothesis grows by
one token per iteration, ranked by a convex blend of the attention score
and an incrementally maintained CTC prefix score over the frame-level
log-probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConditioningError, DimensionError
from .tensor import Tensor
from .vocab import BLANK, EOS, SOS, Vocab

NEG_INF = -np.inf


class DecoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim, dtype=dtype)
        self.self_attn = nn.MultiHeadAttention(dim, heads, rng, dtype)
        self.ln2 = nn.LayerNorm(dim, dtype=dtype)
        self.cross_attn = nn.MultiHeadAttention(dim, heads, rng, dtype)
        self.ln3 = nn.LayerNorm(dim, dtype=dtype)
        self.ff = nn.FeedForward(dim, ff_mult, rng, dtype)

    def forward(self, x: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        h = self.ln1(x)
        x = x + self.self_attn(h, h, mask)
        x = x + self.cross_attn(self.ln2(x), memory)
        return x + self.ff(self.ln3(x))


class TransformerDecoder(nn.Module):
    """Prefix ids -> per-position next-token log-probabilities."""

    def __init__(self, dim: int, vocab: Vocab, layers: int, heads: int,
                 ff_mult: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.dim, self.vocab = dim, vocab
        self.embed = nn.Embedding(vocab.size, dim, rng, dtype)
        self.blocks = nn.ModuleList(
            [DecoderBlock(dim, heads, ff_mult, rng, dtype) for _ in range(layers)])
        self.final_norm = nn.LayerNorm(dim, dtype=dtype)
        self.out = nn.Linear(dim, vocab.size, rng, dtype)
        self._dtype = dtype

    def forward(self, prefix: Sequence[int], memory: Tensor) -> Tensor:
        ids = list(prefix)
        if len(ids) < 2 or ids[0] != SOS:
            raise ConditioningError(
                f"decoder prefix must start with <sos> + language token, got {ids[:2]}")
        if not self.vocab.is_lang(ids[1]):
            raise ConditioningError(
                f"second prefix token must be a language token, got id {ids[1]}")
        if memory.shape[-1] != self.dim:
            raise DimensionError(
                f"memory width {memory.shape[-1]} does not match decoder width {self.dim}")
        x = self.embed(ids)
        x = x + Tensor(T.sinusoidal_positions(len(ids), self.dim, self._dtype))
        mask = nn.causal_mask(len(ids), self._dtype)
        for block in self.blocks:
            x = block(x, memory, mask)
        return T.log_softmax(self.out(self.final_norm(x)), axis=-1)


@dataclass
class Hypothesis:
    tokens: List[int]
    att_score: float
    ctc_score: float
    joint: float


def blend_scores(lambda_ctc: float, ctc: float, att: float) -> float:
    """Convex blend that is exact at the endpoints (0 * -inf must not poison)."""
    if lambda_ctc == 0.0:
        return att
    if lambda_ctc == 1.0:
        return ctc
    return lambda_ctc * ctc + (1.0 - lambda_ctc) * att


class CtcPrefixScorer:
    """Incremental prefix log-probabilities over (T, V) frame log-probs.

    State per prefix is the pair of per-frame log-probabilities of the
    prefix ending in a non-blank (r_n) and in a blank (r_b).
    """

    def __init__(self, log_probs: np.ndarray, blank: int = BLANK):
        self.lp = np.asarray(log_probs, dtype=np.float64)
        self.blank = blank
        self.frames = self.lp.shape[0]

    def initial_state(self) -> np.ndarray:
        r = np.full((self.frames, 2), NEG_INF)
        r[:, 1] = np.cumsum(self.lp[:, self.blank])
        return r

    def extend(self, prefix: Sequence[int], state: np.ndarray,
               cand: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Scores and fresh states for each candidate extension of prefix."""
        cand = np.asarray(cand, dtype=np.int64)
        t_len, k = self.frames, cand.shape[0]
        lp_c = self.lp[:, cand]  # (T, K)
        r = np.full((t_len, 2, k), NEG_INF)
        # joining from a prefix state: blank-ended always, non-blank-ended
        # only when the candidate differs from the prefix's last token
        log_phi = np.repeat(np.logaddexp(state[:, 0], state[:, 1])[:, None],
                            k, axis=1)
        if prefix:
            same = np.where(cand == prefix[-1])[0]
            if same.size:
                log_phi[:, same] = state[:, 1][:, None]
        if not prefix:
            r[0, 0] = lp_c[0]
        psi = r[0, 0].copy()
        blank_lp = self.lp[:, self.blank]
        for t in range(1, t_len):
            r[t, 0] = np.logaddexp(r[t - 1, 0], log_phi[t - 1]) + lp_c[t]
            r[t, 1] = np.logaddexp(r[t - 1, 0], r[t - 1, 1]) + blank_lp[t]
            psi = np.logaddexp(psi, log_phi[t - 1] + lp_c[t])
        return psi, r

    def final(self, state: np.ndarray) -> float:
        """Log-probability that the prefix is the complete output."""
        return float(np.logaddexp(state[-1, 0], state[-1, 1]))


def _candidates(vocab: Vocab) -> list:
    # search alphabet: eos plus content tokens, ascending ids so argmax
    # tie-breaks resolve to the lowest id in both greedy and beam search
    return [EOS] + list(vocab.content_ids)


def greedy_decode(decoder: TransformerDecoder, memory: Tensor, lang: int,
                  max_len: int) -> list:
    """Append the best next token until <eos>; returns content ids only."""
    vocab = decoder.vocab
    cand = _candidates(vocab)
    prefix = [SOS, vocab.lang_id(lang)]
    out: list = []
    with T.no_grad():
        for _ in range(max_len):
            lp = decoder(prefix, memory).data[-1]
            pick = cand[int(np.argmax(lp[cand]))]
            if pick == EOS:
                break
            out.append(pick)
            prefix.append(pick)
    return out


def _score_sequence(decoder: TransformerDecoder, memory: Tensor, lang: int,
                    tokens: Sequence[int], scorer: Optional[CtcPrefixScorer],
                    lambda_ctc: float) -> Hypothesis:
    """Joint score of a fixed token sequence (teacher-forced, eos appended)."""
    vocab = decoder.vocab
    prefix = [SOS, vocab.lang_id(lang)] + list(tokens)
    with T.no_grad():
        lp = decoder(prefix, memory).data
    targets = list(tokens) + [EOS]
    att = float(sum(lp[i + 1, t] for i, t in enumerate(targets)))
    ctc = 0.0
    if scorer is not None:
        state = scorer.initial_state()
        done: list = []
        for tok in tokens:
            _, r = scorer.extend(done, state, [tok])
            state = r[:, :, 0]
            done.append(tok)
        ctc = scorer.final(state)
    return Hypothesis(list(tokens), att, ctc,
                      blend_scores(lambda_ctc, ctc, att))


def beam_decode(decoder: TransformerDecoder, memory: Tensor,
                ctc_log_probs: np.ndarray, lang: int, beam: int,
                lambda_ctc: float, max_len: int) -> Hypothesis:
    """Length-synchronous beam search under the blended CTC/attention score.

    The greedy sequence is always scored as a fallback candidate, so the
    returned joint score never falls below the greedy one.
    """
    if beam < 1:
        raise DimensionError(f"beam width must be >= 1, got {beam}")
    vocab = decoder.vocab
    scorer = CtcPrefixScorer(ctc_log_probs)
    cand = _candidates(vocab)
    cand_arr = np.asarray(cand, dtype=np.int64)
    content = cand_arr[1:]

    # live entry: (tokens, att, ctc_prefix, ctc_state)
    live = [([], 0.0, 0.0, scorer.initial_state())]
    finished: list = []

    with T.no_grad():
        for _ in range(max_len):
            pool: list = []
            for tokens, att, _, state in live:
                prefix = [SOS, vocab.lang_id(lang)] + tokens
                lp = decoder(prefix, memory).data[-1]
                psi, r = scorer.extend(tokens, state, content)
                eos_ctc = scorer.final(state)
                pool.append((tokens, att + float(lp[EOS]), eos_ctc, None, EOS))
                for j, tok in enumerate(content):
                    pool.append((tokens, att + float(lp[tok]), float(psi[j]),
                                 r[:, :, j], int(tok)))
            pool.sort(key=lambda e: (-blend_scores(lambda_ctc, e[2], e[1]),
                                     len(e[0]) + 1, tuple(e[0]) + (e[4],)))
            live = []
            for tokens, att, ctc, state, tok in pool[:beam]:
                if tok == EOS:
                    finished.append(Hypothesis(
                        list(tokens), att, ctc,
                        blend_scores(lambda_ctc, ctc, att)))
                else:
                    live.append((tokens + [tok], att, ctc, state))
            if not live:
                break

    # force-finish anything still alive at the length cap
    for tokens, att, _, state in live:
        prefix = [SOS, vocab.lang_id(lang)] + tokens
        with T.no_grad():
            lp = decoder(prefix, memory).data[-1]
        att_f = att + float(lp[EOS])
        ctc_f = scorer.final(state)
        finished.append(Hypothesis(list(tokens), att_f, ctc_f,
                                   blend_scores(lambda_ctc, ctc_f, att_f)))

    greedy = greedy_decode(decoder, memory, lang, max_len)
    finished.append(_score_sequence(decoder, memory, lang, greedy, scorer,
                                    lambda_ctc))
    finished.sort(key=lambda h: (-h.joint, len(h.tokens), tuple(h.tokens)))
    return finished[0]
