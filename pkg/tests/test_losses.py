"""Objective functions: CTC against enumeration, balancing arithmetic."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyavsr import tensor as T
from polyavsr.classifier import LanguageLabel
from polyavsr.errors import AlignmentError, ContractError, LabelError
from polyavsr.losses import (LossBreakdown, attention_loss, balance_weights,
                             ctc_grad, ctc_loss, total_loss)
from polyavsr.tensor import Tensor


def random_log_probs(rng, t_len, vocab):
    z = rng.normal(0, 2, (t_len, vocab))
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def collapse(path, blank=0):
    out, prev = [], None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return tuple(out)


def enumerate_ctc(lp, target, blank=0):
    """Sum path probabilities over the full alignment preimage."""
    t_len, vocab = lp.shape
    total = -np.inf
    for path in itertools.product(range(vocab), repeat=t_len):
        if collapse(path, blank) == tuple(target):
            total = np.logaddexp(total, lp[np.arange(t_len), path].sum())
    return -total


def test_ctc_single_frame_single_label():
    lp = np.log(np.asarray([[0.2, 0.8]]))
    got = float(ctc_loss(Tensor(lp), [1]).data)
    assert abs(got - (-np.log(0.8))) < 1e-12


def test_ctc_uniform_two_frames():
    # T=2, V=2, target [1]: paths {1,1},{0,1},{1,0} each prob 1/4
    lp = np.full((2, 2), np.log(0.5))
    got = float(ctc_loss(Tensor(lp), [1]).data)
    assert abs(got - (-np.log(0.75))) < 1e-12


def test_ctc_repeat_needs_separating_blank():
    # [1,1] over 2 frames is unrealizable: collapse(11)=1
    lp = np.full((2, 2), np.log(0.5))
    assert np.isinf(float(ctc_loss(Tensor(lp), [1, 1]).data))
    # but 3 frames can do 1,0,1
    lp3 = np.full((3, 2), np.log(0.5))
    got = float(ctc_loss(Tensor(lp3), [1, 1]).data)
    assert abs(got - (-np.log(0.125))) < 1e-12


def test_ctc_too_short_is_infinite_not_an_exception():
    lp = random_log_probs(np.random.default_rng(0), 2, 4)
    assert np.isinf(float(ctc_loss(Tensor(lp), [1, 2, 3]).data))


def test_ctc_matches_enumeration_random_cases():
    rng = np.random.default_rng(42)
    for _ in range(25):
        t_len = int(rng.integers(1, 6))
        vocab = int(rng.integers(2, 5))
        lp = random_log_probs(rng, t_len, vocab)
        n_lab = int(rng.integers(0, min(t_len, 3) + 1))
        target = [int(x) for x in rng.integers(1, vocab, n_lab)]
        want = enumerate_ctc(lp, target)
        got = float(ctc_loss(Tensor(lp), target).data)
        if np.isinf(want):
            assert np.isinf(got)
        else:
            assert abs(got - want) < 1e-9


def test_ctc_rejects_blank_in_target():
    lp = random_log_probs(np.random.default_rng(1), 4, 3)
    with pytest.raises(ContractError):
        ctc_loss(Tensor(lp), [1, 0, 2])


def test_ctc_rejects_unnormalized_rows():
    with pytest.raises(ContractError):
        ctc_loss(Tensor(np.zeros((3, 4))), [1])


def test_ctc_rejects_out_of_range_ids():
    lp = random_log_probs(np.random.default_rng(2), 4, 3)
    with pytest.raises(LabelError):
        ctc_loss(Tensor(lp), [5])


def test_ctc_grad_rows_sum_to_zero():
    rng = np.random.default_rng(3)
    lp = random_log_probs(rng, 6, 5)
    g = ctc_grad(lp, [2, 4, 1])
    assert np.abs(g.sum(-1)).max() < 1e-12


def test_ctc_grad_matches_finite_differences():
    rng = np.random.default_rng(4)
    logits = rng.normal(0, 1, (5, 4))

    def norm(z):
        return z - np.log(np.exp(z).sum(-1, keepdims=True))

    target = [1, 2, 2]
    g = ctc_grad(norm(logits), target)
    eps = 1e-6
    for t in range(5):
        for v in range(4):
            zp, zm = logits.copy(), logits.copy()
            zp[t, v] += eps
            zm[t, v] -= eps
            fp = float(ctc_loss(Tensor(norm(zp)), target).data)
            fm = float(ctc_loss(Tensor(norm(zm)), target).data)
            assert abs((fp - fm) / (2 * eps) - g[t, v]) < 1e-7


def test_ctc_autograd_chain_equals_analytic_grad():
    rng = np.random.default_rng(5)
    z = Tensor(rng.normal(0, 1, (6, 5)), requires_grad=True)
    target = [3, 1, 4]
    T.backward(ctc_loss(T.log_softmax(z, -1), target))
    want = ctc_grad(T.log_softmax(z, -1).data, target)
    assert np.abs(z.grad - want).max() < 1e-12


def test_attention_loss_is_summed_pick_of_rows():
    lp = np.log(np.full((3, 4), 0.25))
    got = float(attention_loss(Tensor(lp), [1, 2, 3]).data)
    assert abs(got - 3 * np.log(4)) < 1e-12


def test_attention_loss_row_count_mismatch():
    lp = Tensor(np.log(np.full((3, 4), 0.25)))
    with pytest.raises(AlignmentError):
        attention_loss(lp, [1, 2])


def test_balance_weights_spec_case():
    labs = [LanguageLabel(0, "A")] * 3 + [LanguageLabel(1, "B")]
    w = balance_weights(labs)
    assert abs(w[0] - (4.0 / 3.0) ** 0.5) < 1e-12
    assert abs(w[3] - 2.0) < 1e-12


def test_balance_weights_uniform_batch_is_unit():
    labs = [LanguageLabel(i % 2, "x") for i in range(4)]
    w = balance_weights([LanguageLabel(0, "a"), LanguageLabel(1, "b")])
    assert np.allclose(w, 2.0 ** 0.5)
    w_single = balance_weights([LanguageLabel(0, "a")] * 5)
    assert np.allclose(w_single, 1.0)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=12))
def test_balance_weights_formula_property(ids):
    labs = [LanguageLabel(i, f"L{i}") for i in ids]
    w = balance_weights(labs)
    for i, lab in enumerate(labs):
        r = ids.count(lab.id) / len(ids)
        assert abs(w[i] - r ** -0.5) < 1e-12


def test_balance_weights_empty_batch_rejected():
    with pytest.raises(ContractError):
        balance_weights([])


def test_total_loss_formula():
    ctc = Tensor(np.asarray(2.0))
    att = Tensor(np.asarray(3.0))
    cls = Tensor(np.asarray(0.25))
    out = float(total_loss(ctc, att, cls, gamma=1.5, alpha=0.1,
                           beta=10.0).data)
    want = 1.5 * (0.1 * 2.0 + 0.9 * 3.0 + 10.0 * 0.25)
    assert abs(out - want) < 1e-12


def test_total_loss_validates_ranges_and_finiteness():
    fin = Tensor(np.asarray(1.0))
    inf = Tensor(np.asarray(np.inf))
    with pytest.raises(ContractError):
        total_loss(fin, fin, fin, gamma=1.0, alpha=1.5, beta=1.0)
    with pytest.raises(ContractError):
        total_loss(fin, fin, fin, gamma=1.0, alpha=0.5, beta=-1.0)
    with pytest.raises(ContractError):
        total_loss(fin, fin, fin, gamma=0.0, alpha=0.5, beta=1.0)
    with pytest.raises(ContractError):
        total_loss(inf, fin, fin, gamma=1.0, alpha=0.5, beta=1.0)


def test_total_loss_beta_zero_keeps_classifier_in_graph():
    cls_src = Tensor(np.asarray(2.0), requires_grad=True)
    out = total_loss(Tensor(np.asarray(1.0)), Tensor(np.asarray(1.0)),
                     cls_src * 1.0, gamma=1.0, alpha=0.5, beta=0.0)
    T.backward(out)
    assert cls_src.grad is not None
    assert float(cls_src.grad) == 0.0


def test_loss_breakdown_recompute():
    br = LossBreakdown(ctc=2.0, att=3.0, cls=0.25, gamma=1.5, total=0.0)
    assert abs(br.recompute(0.1, 10.0) -
               1.5 * (0.2 + 2.7 + 2.5)) < 1e-12
