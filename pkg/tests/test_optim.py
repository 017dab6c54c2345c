"""Adam: scalar reference oracle and contract errors."""

import numpy as np
import pytest

from polyavsr import tensor as T
from polyavsr.errors import IncompleteGradientError
from polyavsr.optim import Adam, OptimizerState, adam_step
from polyavsr.tensor import Tensor


def reference_adam(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook update sequence computed with plain floats."""
    m = v = 0.0
    out = [theta]
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta = theta - lr * mh / (np.sqrt(vh) + eps)
        out.append(theta)
    return out


def test_first_step_moves_by_lr():
    # with bias correction the first step is almost exactly lr * sign(g)
    p = Tensor(np.asarray([1.0]), requires_grad=True)
    p.grad = np.asarray([4.2])
    opt = Adam([p], lr=1e-3)
    opt.step()
    assert abs(float(p.data[0]) - (1.0 - 1e-3)) < 1e-9


def test_five_steps_match_scalar_reference():
    grads = [0.5, -1.2, 0.3, 0.9, -0.1]
    want = reference_adam(2.0, grads, lr=0.01)
    p = Tensor(np.asarray([2.0]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    for i, g in enumerate(grads):
        p.grad = np.asarray([g])
        opt.step()
        assert abs(float(p.data[0]) - want[i + 1]) < 1e-12
        opt.zero_grad()


def test_missing_grad_raises():
    p = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([p], lr=1e-3)
    with pytest.raises(IncompleteGradientError):
        opt.step()


def test_shape_mismatch_raises():
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.ones(3)
    opt = Adam([p], lr=1e-3)
    with pytest.raises(IncompleteGradientError):
        opt.step()


def test_state_persists_across_steps():
    p = Tensor(np.asarray([0.0]), requires_grad=True)
    state = OptimizerState.for_params([p], lr=0.1)
    p.grad = np.asarray([1.0])
    adam_step([p], state)
    assert state.step == 1
    assert state.m[0][0] != 0.0
    p.grad = np.asarray([1.0])
    adam_step([p], state)
    assert state.step == 2


def test_update_keeps_float32_params_float32():
    p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    p.grad = np.ones(3, dtype=np.float32)
    Adam([p], lr=1e-3).step()
    assert p.data.dtype == np.float32


def test_training_reduces_simple_quadratic():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(4,)), requires_grad=True)
    target = np.asarray([1.0, -2.0, 0.5, 3.0])
    opt = Adam([w], lr=0.05)
    first = None
    for _ in range(200):
        opt.zero_grad()
        loss = T.reduce_sum((w - Tensor(target)) ** 2.0)
        if first is None:
            first = float(loss.data)
        T.backward(loss)
        opt.step()
    assert float(loss.data) < 1e-3 * first
