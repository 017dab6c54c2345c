"""Layer building blocks on top of the tensor engine.

``Module`` tracks parameters, buffers, and submodules by attribute name so
every trainable array has a stable dotted path (used for checkpointing and
for selecting trainable subsets).
"""

from __future__ import annotations

import math
from typing import Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield (prefix + name, b)
        for name, mod in self._modules.items():
            yield from mod.named_buffers(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    def train(self, mode: bool = True):
        for mod in self.modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for mod in mods:
            self.append(mod)

    def append(self, mod: Module):
        setattr(self, str(len(self._list)), mod)
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, dtype=dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64, bias: bool = True):
        super().__init__()
        self.weight = _uniform_init(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.weight = Tensor(rng.normal(0.0, 0.02, (count, dim)), requires_grad=True, dtype=dtype)

    def forward(self, ids) -> Tensor:
        return T.getitem(self.weight, np.asarray(ids, dtype=np.int64))


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(dim), requires_grad=True, dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm1d(Module):
    def __init__(self, channels: int, dtype=np.float64, eps: float = 1e-5,
                 momentum: float = 0.1):
        super().__init__()
        self.gain = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm1d(
            x, self.gain, self.bias, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float64, bias: bool = True):
        super().__init__()
        self.weight = _uniform_init(
            rng, (out_channels, in_channels, kernel), in_channels * kernel, dtype)
        self.bias = (Tensor(np.zeros((out_channels, 1)), requires_grad=True, dtype=dtype)
                     if bias else None)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv1d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float64, bias: bool = True):
        super().__init__()
        self.weight = _uniform_init(
            rng, (out_channels, in_channels, kernel, kernel),
            in_channels * kernel * kernel, dtype)
        self.bias = (Tensor(np.zeros((1, out_channels, 1, 1)), requires_grad=True, dtype=dtype)
                     if bias else None)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class MultiHeadAttention(Module):
    """Scaled dot-product attention over unbatched (seq, width) inputs."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def forward(self, query: Tensor, memory: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        tq = query.shape[0]
        tk = memory.shape[0]
        h, dh = self.heads, self.head_dim

        def split_heads(x, t):
            return T.transpose(T.reshape(x, (t, h, dh)), (1, 0, 2))

        q = split_heads(self.wq(query), tq)            # (h, Tq, dh)
        k = split_heads(self.wk(memory), tk)           # (h, Tk, dh)
        v = split_heads(self.wv(memory), tk)
        scores = T.matmul(q, T.transpose(k, (0, 2, 1)))
        scores = T.mul(scores, 1.0 / math.sqrt(dh))    # (h, Tq, Tk)
        if mask is not None:
            scores = T.add(scores, Tensor(mask.astype(scores.dtype)))
        weights = T.softmax(scores, axis=-1)
        mixed = T.matmul(weights, v)                   # (h, Tq, dh)
        merged = T.reshape(T.transpose(mixed, (1, 0, 2)), (tq, self.dim))
        return self.wo(merged)


class FeedForward(Module):
    def __init__(self, dim: int, mult: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.up = Linear(dim, dim * mult, rng, dtype)
        self.down = Linear(dim * mult, dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.down(T.relu(self.up(x)))


def causal_mask(length: int, dtype=None) -> np.ndarray:
    """Additive mask blocking attention to future positions."""
    mask = np.zeros((length, length), dtype=dtype or T.DEFAULT_DTYPE)
    mask[np.triu_indices(length, k=1)] = T.NEG_MASK
    return mask
