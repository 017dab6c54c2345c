"""Training objectives: CTC, attention cross-entropy, language balancing.

The CTC loss runs a log-space forward recursion over the blank-extended
target and backpropagates through state occupancies computed from the
forward/backward lattices, so the gradient with respect to the frame
log-probabilities is exactly minus the per-frame symbol occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .classifier import LanguageLabel
from .errors import AlignmentError, ContractError, LabelError
from .tensor import Tensor

NEG_INF = -np.inf


def _check_log_dist(lp: np.ndarray) -> None:
    row_mass = np.exp(lp).sum(axis=-1)
    worst = float(np.max(np.abs(row_mass - 1.0)))
    if not np.isfinite(worst) or worst > 1e-6:
        raise ContractError(
            f"log_probs rows must be log-distributions, row mass off by {worst:.3g}")


def _extend_target(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = np.asarray(target, dtype=np.int64)
    return ext


def _skip_mask(ext: np.ndarray, blank: int) -> np.ndarray:
    # a skip into state s is legal when s holds a label differing from s-2
    allow = np.zeros(ext.shape[0], dtype=bool)
    if ext.shape[0] > 2:
        allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def _ctc_alpha(lp: np.ndarray, ext: np.ndarray, allow: np.ndarray) -> np.ndarray:
    t_len, s_len = lp.shape[0], ext.shape[0]
    emit = lp[:, ext]  # (T, S)
    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if s_len > 2:
            skip = np.where(allow[2:], prev[:-2], NEG_INF)
            acc[2:] = np.logaddexp(acc[2:], skip)
        alpha[t] = acc + emit[t]
    return alpha


def _ctc_beta(lp: np.ndarray, ext: np.ndarray, allow: np.ndarray) -> np.ndarray:
    # beta[t, s] excludes the emission at frame t (alpha includes it), so
    # alpha[t] + beta[t] sums to the total log-likelihood at every frame
    t_len, s_len = lp.shape[0], ext.shape[0]
    emit = lp[:, ext]
    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if s_len > 2:
            skip = np.where(allow[2:], nxt[2:], NEG_INF)
            acc[:-2] = np.logaddexp(acc[:-2], skip)
        beta[t] = acc
    return beta


def _ctc_lattice(lp: np.ndarray, target: Sequence[int], blank: int):
    if lp.ndim != 2:
        raise ContractError(f"CTC expects (T, V) log_probs, got shape {lp.shape}")
    vocab = lp.shape[1]
    ids = np.asarray(target, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise LabelError(f"CTC target ids must lie in [0, {vocab})")
    if np.any(ids == blank):
        raise ContractError("CTC targets must not contain the blank id")
    _check_log_dist(lp)
    ext = _extend_target(ids, blank)
    allow = _skip_mask(ext, blank)
    alpha = _ctc_alpha(lp, ext, allow)
    if ext.shape[0] > 1:
        log_like = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        log_like = alpha[-1, -1]
    return ext, allow, alpha, float(log_like)


def _occupancy(lp: np.ndarray, ext: np.ndarray, allow: np.ndarray,
               alpha: np.ndarray, log_like: float) -> np.ndarray:
    beta = _ctc_beta(lp, ext, allow)
    post = alpha + beta - log_like  # (T, S) state posteriors
    occ = np.zeros_like(lp)
    np.add.at(occ, (slice(None), ext), np.exp(post))
    return occ


def ctc_loss(log_probs: Tensor, target: Sequence[int], blank: int = 0) -> Tensor:
    """Negative log-likelihood of ``target`` under per-frame ``log_probs``.

    Unrealizable targets (too few frames for the labels plus mandatory
    blanks between repeats) yield +inf, not an exception.
    """
    lp = log_probs.data
    ext, allow, alpha, log_like = _ctc_lattice(lp, target, blank)
    loss = np.asarray(-log_like)
    if not np.isfinite(log_like):
        return Tensor(np.asarray(np.inf, dtype=lp.dtype))

    def backward_fn(g):
        occ = _occupancy(lp, ext, allow, alpha, log_like)
        return (-g * occ,)

    return T.custom_op(loss.astype(lp.dtype), (log_probs,), backward_fn)


def ctc_grad(log_probs: np.ndarray, target: Sequence[int],
             blank: int = 0) -> np.ndarray:
    """d loss / d logits = softmax - occupancy; rows sum to zero."""
    lp = np.asarray(log_probs, dtype=np.float64)
    ext, allow, alpha, log_like = _ctc_lattice(lp, target, blank)
    if not np.isfinite(log_like):
        raise ContractError("CTC gradient undefined for unrealizable target")
    occ = _occupancy(lp, ext, allow, alpha, log_like)
    return np.exp(lp) - occ


def attention_loss(step_log_probs: Tensor, target_with_eos: Sequence[int]) -> Tensor:
    """Teacher-forced cross-entropy summed over output positions."""
    ids = np.asarray(target_with_eos, dtype=np.int64)
    rows = step_log_probs.shape[0]
    if rows != ids.shape[0]:
        raise AlignmentError(
            f"decoder emitted {rows} prediction rows for {ids.shape[0]} targets")
    if ids.size and (ids.min() < 0 or ids.max() >= step_log_probs.shape[1]):
        raise LabelError(
            f"attention target ids must lie in [0, {step_log_probs.shape[1]})")
    picked = step_log_probs[(np.arange(rows), ids)]
    return -T.reduce_sum(picked)


def balance_weights(labels: Sequence[LanguageLabel]) -> np.ndarray:
    """Inverse-square-root within-batch language frequency, one per sample."""
    if len(labels) == 0:
        raise ContractError("balance_weights needs a non-empty batch")
    ids = np.asarray([lb.id for lb in labels], dtype=np.int64)
    counts: dict = {}
    for i in ids:
        counts[int(i)] = counts.get(int(i), 0) + 1
    ratios = np.asarray([counts[int(i)] / len(ids) for i in ids])
    return ratios ** -0.5


def total_loss(ctc: Tensor, att: Tensor, cls: Tensor, gamma: float,
               alpha: float, beta: float) -> Tensor:
    """gamma * (alpha * ctc + (1 - alpha) * att + beta * cls)."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if beta < 0.0:
        raise ContractError(f"beta must be non-negative, got {beta}")
    if gamma <= 0.0 or not np.isfinite(gamma):
        raise ContractError(f"gamma must be positive and finite, got {gamma}")
    for name, term in (("ctc", ctc), ("att", att), ("cls", cls)):
        if not np.all(np.isfinite(term.data)):
            raise ContractError(f"non-finite {name} loss passed to total_loss")
    return (ctc * alpha + att * (1.0 - alpha) + cls * beta) * gamma


@dataclass
class LossBreakdown:
    ctc: float
    att: float
    cls: float
    gamma: float
    total: float

    def recompute(self, alpha: float, beta: float) -> float:
        return self.gamma * (alpha * self.ctc + (1 - alpha) * self.att
                             + beta * self.cls)
