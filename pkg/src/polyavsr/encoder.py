"""Prompt-conditioned transformer encoder.

Every layer receives a fresh learnable prompt matrix prepended to the
feature rows; the prompt rows coming OUT of a layer are discarded and the
next layer's own prompt bank entry takes their place. Only the final
layer's prompt output survives, concatenated with the final feature rows,
so downstream heads see an (n + T, D) sequence.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor


class PromptBank(nn.Module):
    """One (n, d) Gaussian-initialized prompt matrix per encoder layer."""

    def __init__(self, count: int, dim: int, layers: int, seed: int,
                 dtype=np.float64):
        super().__init__()
        if count < 0 or layers < 1:
            raise ConfigurationError(
                f"prompt bank needs count >= 0 and layers >= 1, got {count}, {layers}")
        self.count, self.dim, self.layers = count, dim, layers
        rng = np.random.default_rng(seed)
        for i in range(layers):
            mat = rng.normal(0.0, 0.02, size=(count, dim)).astype(dtype)
            setattr(self, f"layer{i}", Tensor(mat, requires_grad=True))

    def prompt(self, i: int) -> Tensor:
        if not 0 <= i < self.layers:
            raise ConfigurationError(f"prompt index {i} out of range [0, {self.layers})")
        return getattr(self, f"layer{i}")


def init_prompt_bank(count: int, dim: int, layers: int, seed: int,
                     dtype=np.float64) -> PromptBank:
    return PromptBank(count, dim, layers, seed, dtype)


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward residual block."""

    def __init__(self, dim: int, heads: int, ff_mult: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim, dtype=dtype)
        self.attn = nn.MultiHeadAttention(dim, heads, rng, dtype)
        self.ln2 = nn.LayerNorm(dim, dtype=dtype)
        self.ff = nn.FeedForward(dim, ff_mult, rng, dtype)

    def forward(self, seq: Tensor) -> Tensor:
        h = self.ln1(seq)
        seq = seq + self.attn(h, h)
        return seq + self.ff(self.ln2(seq))


class PromptEncoder(nn.Module):
    def __init__(self, dim: int, layers: int, heads: int, ff_mult: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.dim, self.depth = dim, layers
        self.blocks = nn.ModuleList(
            [EncoderBlock(dim, heads, ff_mult, rng, dtype) for _ in range(layers)])
        self.final_norm = nn.LayerNorm(dim, dtype=dtype)
        self._dtype = dtype
        self._pos_cache: dict = {}

    def _positions(self, length: int) -> np.ndarray:
        # positions apply to feature rows only, never to prompt rows
        got = self._pos_cache.get(length)
        if got is None:
            got = T.sinusoidal_positions(length, self.dim, self._dtype)
            self._pos_cache[length] = got
        return got

    def layer_forward(self, i: int, prompt_in: Tensor,
                      feats_in: Tensor) -> tuple:
        """Run block i over [prompt; feats]; split the result back apart."""
        if prompt_in.shape[-1] != self.dim or feats_in.shape[-1] != self.dim:
            raise DimensionError(
                f"layer {i} expects width {self.dim}, got prompt {prompt_in.shape}"
                f" and features {feats_in.shape}")
        n = prompt_in.shape[0]
        seq = T.concat([prompt_in, feats_in], axis=0)
        out = self.blocks[i](seq)
        return out[:n], out[n:]

    def encode(self, f_av: Tensor, bank: PromptBank) -> Tensor:
        """Full prompted pass: returns e_av of shape (n + T, d)."""
        if bank.layers != self.depth:
            raise ConfigurationError(
                f"prompt bank has {bank.layers} layers, encoder has {self.depth}")
        if bank.dim != self.dim:
            raise ConfigurationError(
                f"prompt width {bank.dim} does not match encoder width {self.dim}")
        feats = f_av + Tensor(self._positions(f_av.shape[0]))
        prompt_out = bank.prompt(0)[:0]  # placeholder, overwritten below
        for i in range(self.depth):
            prompt_out, feats = self.layer_forward(i, bank.prompt(i), feats)
        e_av = T.concat([prompt_out, feats], axis=0)
        return self.final_norm(e_av)

    def encode_plain(self, f_av: Tensor) -> Tensor:
        """Promptless reference pass over the same blocks."""
        feats = f_av + Tensor(self._positions(f_av.shape[0]))
        for block in self.blocks:
            feats = block(feats)
        return self.final_norm(feats)
