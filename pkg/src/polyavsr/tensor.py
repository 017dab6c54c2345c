"""Dense tensors with reverse-mode automatic differentiation.

Every array in the model is a :class:`Tensor` wrapping a numpy buffer.
Operations record their inputs and a local backward rule on the output
tensor; :func:`backward` replays the recorded graph in reverse
topological order and accumulates gradients additively on every tensor
with ``requires_grad``.

Two precision modes are supported by constructing tensors as float64
(default, used by tests and oracles) or float32 (training speed). All
kernels preserve the dtype of their inputs.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateBatchError,
    DeterminismError,
    DimensionError,
)

DEFAULT_DTYPE = np.float64

# Large negative finite stand-in for -inf in attention masks: exp() underflows
# to exactly 0 in both float32 and float64 without producing inf/nan upstream.
NEG_MASK = -1e9

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """N-dimensional float array participating in the differentiation graph.

    ``_parents`` and ``_backward`` are the locally stored graph record:
    ``_backward(grad_out)`` returns one gradient array (or None) per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------
    def backward(self):
        backward(self)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, power(_wrap(other, self.dtype), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 0:
            axes = None
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def custom_op(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Record a hand-written differentiable op (used by fused losses).

    ``backward_fn`` receives the output gradient and must return one
    gradient array (or None) per parent, in order.
    """
    return _make(np.asarray(data), tuple(parents), backward_fn)


def topo_order(root: Tensor) -> list:
    """Topologically ordered record of the graph below ``root`` (parents first)."""
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Populate ``grad`` on every reachable requires_grad tensor.

    The seed must be scalar; gradients accumulate additively across
    multiple uses of a tensor and across repeated backward calls.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward expects a scalar seed, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        return
    order = topo_order(loss)
    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data + b.data
    sa, sb = a.data.shape, b.data.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        scale = b

        def back_scalar(g):
            return (g * scale,)

        return _make(a.data * b, (a,), back_scalar)
    b = _wrap(b, a.dtype)
    da, db = a.data, b.data

    def back(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return _make(da * db, (a, b), back)


def power(a: Tensor, exponent: float) -> Tensor:
    data = a.data**exponent
    src = a.data

    def back(g):
        return (g * exponent * src ** (exponent - 1.0),)

    return _make(data, (a,), back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    src = a.data
    return _make(np.log(src), (a,), lambda g: (g / src,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


# -- shape manipulation ------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    src_shape = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src_shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        def back_t(g):
            return (g.T if g.ndim > 1 else g,)

        return _make(a.data.T, (a,), back_t)
    inv = tuple(np.argsort(axes))

    def back(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tensors, back)


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, (list, np.ndarray)):
        idx = np.asarray(idx)
    src_shape = a.data.shape
    data = np.asarray(a.data[idx])
    if data.base is not None or np.shares_memory(data, a.data):
        data = data.copy()

    def back(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(data, (a,), back)


# -- reductions --------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    src_shape = a.data.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src_shape).copy(),)

    return _make(data, (a,), back)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)
    src_shape = a.data.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src_shape).copy(),)

    return _make(data, (a,), back)


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with standard backward rules g·bᵀ and aᵀ·g.

    Inputs of rank > 2 are treated as stacks of matrices (leading axes
    broadcast).
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    da, db = a.data, b.data
    data = da @ db

    def back(g):
        ga = _unbroadcast(g @ db.swapaxes(-1, -2), da.shape)
        gb = _unbroadcast(da.swapaxes(-1, -2) @ g, db.shape)
        return ga, gb

    return _make(data, (a, b), back)


# -- softmax family ----------------------------------------------------


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Log-probabilities along ``axis``, stabilized by max subtraction."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


# -- convolution kernels -----------------------------------------------


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` [C_in, T] with ``kernels`` [C_out, C_in, K].

    Output length is floor((T + 2·padding − K)/stride) + 1.
    """
    if stride < 1:
        raise ContractError(f"conv1d stride must be >= 1, got {stride}")
    cin, t = x.data.shape
    cout, cin_k, k = kernels.data.shape
    if cin_k != cin:
        raise DimensionError(
            f"conv1d channel mismatch: input {x.data.shape}, kernels {kernels.data.shape}"
        )
    t_pad = t + 2 * padding
    if k > t_pad:
        raise DimensionError(
            f"conv1d kernel width {k} exceeds padded input length {t_pad}"
        )
    t_out = (t_pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    idx = stride * np.arange(t_out)[:, None] + np.arange(k)[None, :]
    patches = xp[:, idx]  # (C_in, T_out, K)
    data = np.tensordot(kernels.data, patches, axes=([1, 2], [0, 2]))

    def back(g):
        gk = np.tensordot(g, patches, axes=([1], [1]))  # (C_out, C_in, K)
        gpatch = np.tensordot(kernels.data, g, axes=([0], [0]))  # (C_in, K, T_out)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, kk : kk + stride * t_out : stride] += gpatch[:, kk, :]
        gx = gxp[:, padding : padding + t] if padding else gxp
        return gx, gk

    return _make(data, (x, kernels), back)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` [B, C_in, H, W] with ``kernels`` [C_out, C_in, KH, KW]."""
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    b, cin, h, w = x.data.shape
    cout, cin_k, kh, kw = kernels.data.shape
    if cin_k != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.data.shape}, kernels {kernels.data.shape}"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
        )
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    xp = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.data
    )
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (B, C_in, H_out, W_out, KH, KW)
    data = np.einsum("bcijkl,ockl->boij", windows, kernels.data, optimize=True)

    def back(g):
        gk = np.einsum("boij,bcijkl->ockl", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for k1 in range(kh):
            for k2 in range(kw):
                contrib = np.tensordot(g, kernels.data[:, :, k1, k2], axes=([1], [0]))
                gxp[
                    :,
                    :,
                    k1 : k1 + stride * h_out : stride,
                    k2 : k2 + stride * w_out : stride,
                ] += contrib.transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gk

    return _make(data, (x, kernels), back)


# -- normalization -----------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing-axis row to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be > 0, got {eps}")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shape mismatch: x rows of {d}, "
            f"gain {gain.data.shape}, bias {bias.data.shape}"
        )
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = add(x, neg(mu))
    var = reduce_mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def batch_norm1d(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of ``x`` [B, C, T].

    Train mode normalizes over the batch and time axes and updates the
    running statistics in place by exponential moving average; eval mode
    normalizes with the running statistics.
    """
    b, c, t = x.data.shape
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise DimensionError(
            f"batch_norm1d affine shape mismatch: {c} channels, "
            f"gain {gain.data.shape}, bias {bias.data.shape}"
        )
    g3 = reshape(gain, (1, c, 1))
    b3 = reshape(bias, (1, c, 1))
    if not training:
        rm = running_mean.reshape(1, c, 1)
        rv = running_var.reshape(1, c, 1)
        scale = (1.0 / np.sqrt(rv + eps)).astype(x.dtype)
        normed = mul(add(x, Tensor(-rm.astype(x.dtype))), Tensor(scale))
        return add(mul(normed, g3), b3)
    n = b * t
    if n < 2:
        raise DegenerateBatchError(
            f"batch_norm1d training needs B*T >= 2 elements per channel, got {n}"
        )
    mu = reduce_mean(x, axis=(0, 2), keepdims=True)
    centered = add(x, neg(mu))
    var = reduce_mean(mul(centered, centered), axis=(0, 2), keepdims=True)
    # running stats track the batch statistics (unbiased variance), outside the graph
    batch_mu = mu.data.reshape(c)
    batch_var = var.data.reshape(c) * (n / (n - 1))
    running_mean *= 1.0 - momentum
    running_mean += momentum * batch_mu
    running_var *= 1.0 - momentum
    running_var += momentum * batch_var
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), g3), b3)


# -- verification harness ----------------------------------------------


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    max_coords: int = 200,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` must rebuild the forward graph from ``params`` on every call and
    return a scalar. Up to ``max_coords`` coordinates are sampled across all
    parameters. The relative error uses an absolute floor of 1.0 in the
    denominator so near-zero gradients are compared absolutely.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    params = list(params)
    with no_grad():
        v1 = float(fn().data)
        v2 = float(fn().data)
    if v1 != v2:
        raise DeterminismError(
            f"objective is not deterministic: {v1!r} != {v2!r} on repeated evaluation"
        )
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(i)] for i in picks]

    max_rel = 0.0
    with no_grad():
        for pi, ci in coords:
            flat = params[pi].data.reshape(-1)
            orig = flat[ci]
            flat[ci] = orig + eps
            f_plus = float(fn().data)
            flat[ci] = orig - eps
            f_minus = float(fn().data)
            flat[ci] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = float(grads[pi].reshape(-1)[ci])
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1.0)
            if rel > max_rel:
                max_rel = rel
    return max_rel


# -- constructors ------------------------------------------------------


def zeros(shape, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)


def ones(shape, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)


def sinusoidal_positions(length: int, width: int, dtype=None) -> np.ndarray:
    """Standard fixed sin/cos positional table, shape (length, width)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(0, width, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, dim / width)
    table = np.zeros((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table.astype(dtype or DEFAULT_DTYPE)
