"""Modality frontends: raw audio/video to frame-synchronous features.

The audio front downsamples a 1-D signal by a fixed factor with strided
convolutions; the visual front embeds each frame independently with a
small 2-D conv stack. Both emit (T, D) sequences with a shared T so the
fusion stage can concatenate along the feature axis.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .errors import AlignmentError, DimensionError
from .tensor import Tensor


class AudioFrontend(nn.Module):
    """Strided conv stack turning (S,) samples into (S/k, D) features.

    Each stage uses kernel 2·p + stride with padding p = stride // 2 so the
    sequence length divides exactly by the stride; the overall downsample
    factor k is the product of the stage strides.
    """

    def __init__(self, out_dim: int, rng: np.random.Generator,
                 strides: Sequence[int] = (2, 2), channels: int = 16,
                 dtype=np.float64):
        super().__init__()
        self.downsample = int(np.prod(strides))
        self.convs = nn.ModuleList()
        in_c = 1
        for i, s in enumerate(strides):
            if s % 2 != 0:
                raise DimensionError(f"audio stride must be even, got {s}")
            out_c = out_dim if i == len(strides) - 1 else channels
            pad = s // 2
            self.convs.append(
                nn.Conv1d(in_c, out_c, kernel=2 * pad + s, rng=rng,
                          stride=s, padding=pad, dtype=dtype))
            in_c = out_c

    def forward(self, samples: Tensor) -> Tensor:
        if samples.ndim != 1:
            raise DimensionError(f"audio input must be 1-D, got shape {samples.shape}")
        s = samples.shape[0]
        if s % self.downsample != 0:
            raise AlignmentError(
                f"audio length {s} not divisible by downsample factor {self.downsample}"
            )
        x = T.reshape(samples, (1, s))
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = T.relu(x)
        return T.transpose(x, (1, 0))  # (T, D) time-major


class VisualFrontend(nn.Module):
    """Per-frame 2-D conv stack + linear projection to (L, D)."""

    def __init__(self, out_dim: int, rng: np.random.Generator,
                 height: int = 8, width: int = 8, in_channels: int = 1,
                 channels: Sequence[int] = (8, 16), dtype=np.float64):
        super().__init__()
        self.height, self.width, self.in_channels = height, width, in_channels
        self.convs = nn.ModuleList()
        in_c, h, w = in_channels, height, width
        for out_c in channels:
            self.convs.append(
                nn.Conv2d(in_c, out_c, kernel=3, rng=rng, stride=2, padding=1,
                          dtype=dtype))
            in_c = out_c
            h = (h + 2 - 3) // 2 + 1
            w = (w + 2 - 3) // 2 + 1
        self.flat_dim = in_c * h * w
        self.proj = nn.Linear(self.flat_dim, out_dim, rng, dtype)

    def forward(self, frames: Tensor) -> Tensor:
        if frames.ndim != 4:
            raise DimensionError(
                f"video input must be (L, H, W, C), got shape {frames.shape}")
        l = frames.shape[0]
        x = T.transpose(frames, (0, 3, 1, 2))  # (L, C, H, W)
        for conv in self.convs:
            x = T.relu(conv(x))
        x = T.reshape(x, (l, self.flat_dim))
        return self.proj(x)  # (L, D), one row per frame


class Fusion(nn.Module):
    """Concatenate audio and visual features, layer-normalize, project 2D -> D."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.norm = nn.LayerNorm(2 * dim, dtype=dtype)
        self.proj = nn.Linear(2 * dim, dim, rng, dtype)

    def forward(self, f_a: Tensor, f_v: Tensor) -> Tensor:
        if f_a.shape[0] != f_v.shape[0]:
            raise AlignmentError(
                f"modality lengths differ: audio {f_a.shape[0]} frames, "
                f"video {f_v.shape[0]} frames")
        if f_a.shape[1] != f_v.shape[1]:
            raise DimensionError(
                f"modality widths differ: audio {f_a.shape[1]}, video {f_v.shape[1]}")
        joint = T.concat([f_a, f_v], axis=1)
        return self.proj(self.norm(joint))
