"""Adaptive-moment (Adam) parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import IncompleteGradientError
from .tensor import Tensor


@dataclass
class OptimizerState:
    """Per-parameter moment buffers plus the shared step counter and coefficients."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], state: OptimizerState) -> OptimizerState:
    """One bias-corrected adaptive-moment update; increments the step counter.

    Every parameter must carry a gradient (populated by backward); a missing
    gradient means the graph was wired wrong, not that the gradient is zero.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            raise IncompleteGradientError(
                f"parameter {i} of {len(params)} has no gradient; "
                "run backward() before adam_step"
            )
        if p.grad.shape != p.data.shape:
            raise IncompleteGradientError(
                f"parameter {i} gradient shape {p.grad.shape} does not match "
                f"parameter shape {p.data.shape}"
            )
        if state.m[i].shape != p.data.shape:
            raise IncompleteGradientError(
                f"moment buffer {i} shape {state.m[i].shape} does not match "
                f"parameter shape {p.data.shape}"
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state


class Adam:
    """Convenience wrapper binding a parameter list to its optimizer state."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState.for_params(self.params, lr, beta1, beta2, eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)
