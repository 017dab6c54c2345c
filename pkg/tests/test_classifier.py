"""Language head: logits shape, loss gradients, batched statistics path."""

import numpy as np
import pytest

from polyavsr import tensor as T
from polyavsr.classifier import (LanguageClassifier, LanguageLabel, class_loss,
                                 predict_language)
from polyavsr.errors import DimensionError, LabelError
from polyavsr.tensor import Tensor


def test_logit_vector_has_one_entry_per_language():
    cls = LanguageClassifier(16, 5, np.random.default_rng(0))
    e = Tensor(np.random.default_rng(1).normal(size=(9, 16)))
    assert cls(e).shape == (5,)


def test_width_mismatch_rejected():
    cls = LanguageClassifier(16, 3, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        cls(Tensor(np.zeros((9, 8))))


def test_class_loss_is_cross_entropy():
    logits = Tensor(np.asarray([0.0, 0.0, 0.0]))
    loss = float(class_loss(logits, LanguageLabel(1, "L1")).data)
    assert abs(loss - np.log(3.0)) < 1e-12


def test_class_loss_label_out_of_range():
    with pytest.raises(LabelError):
        class_loss(Tensor(np.zeros(3)), LanguageLabel(3, "L3"))


def test_predict_language_ties_to_lowest_id():
    assert predict_language(Tensor(np.asarray([1.0, 1.0, 0.0]))).id == 0
    assert predict_language(Tensor(np.asarray([0.0, 2.0, 2.0]))).id == 1


def test_gradients_flow_through_conv_blocks():
    cls = LanguageClassifier(8, 3, np.random.default_rng(2))
    e = Tensor(np.random.default_rng(3).normal(size=(7, 8)),
               requires_grad=True)
    T.backward(class_loss(cls(e), LanguageLabel(0, "L0")))
    assert e.grad is not None and np.abs(e.grad).max() > 0
    first_conv = cls.blocks[0].conv.weight
    assert first_conv.grad is not None and np.abs(first_conv.grad).max() > 0


def test_grad_check_through_classifier():
    cls = LanguageClassifier(8, 3, np.random.default_rng(4))
    e = Tensor(np.random.default_rng(5).normal(size=(6, 8)))
    params = [cls.blocks[0].conv.weight, cls.fc1.weight, cls.fc2.bias,
              cls.blocks[2].bn.gain]
    err = T.grad_check(lambda: class_loss(cls(e), LanguageLabel(2, "L2")),
                       params, eps=1e-5, max_coords=80,
                       rng=np.random.default_rng(6))
    assert err < 1e-6


def test_batched_path_matches_single_path_in_eval_mode():
    # identical running stats make the two paths pointwise identical
    cls = LanguageClassifier(8, 3, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    seqs = [Tensor(rng.normal(size=(n, 8))) for n in (5, 9, 7)]
    cls.eval()
    batched = cls.forward_batch(seqs).data
    singles = np.stack([cls(s).data for s in seqs])
    assert np.allclose(batched, singles, atol=1e-10)
    cls.train()


def test_batched_path_shares_statistics_in_train_mode():
    cls = LanguageClassifier(8, 2, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    seqs = [Tensor(rng.normal(size=(n, 8))) for n in (4, 6)]
    batched = cls.forward_batch(seqs).data
    singles = np.stack([cls(s).data for s in seqs])
    # per-sample statistics differ from batch-wide ones
    assert not np.allclose(batched, singles, atol=1e-6)
