"""Utterance-level language identification head.

Consumes the full encoder output (prompt rows included), treats the
feature axis as conv channels, and pools over the sequence axis into a
single logit vector per utterance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import DimensionError, LabelError
from .tensor import Tensor


@dataclass(frozen=True)
class LanguageLabel:
    id: int
    code: str


def make_labels(m: int) -> list:
    return [LanguageLabel(i, f"L{i}") for i in range(m)]


class _ConvBlock(nn.Module):
    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.conv = nn.Conv1d(dim, dim, kernel=3, rng=rng, stride=1, padding=1,
                              dtype=dtype)
        self.bn = nn.BatchNorm1d(dim, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        c, length = x.shape
        h = self.conv(x)
        h = T.reshape(h, (1, c, length))
        h = self.bn(h)
        h = T.reshape(h, (c, length))
        return T.relu(h)

    def forward_many(self, xs: list) -> list:
        """Per-sample convs, one shared batch statistic across all samples.

        Variable-length sequences cannot be stacked, so pre-norm
        activations are concatenated along time for the statistics and
        split back apart afterwards.
        """
        hs = [self.conv(x) for x in xs]
        lens = [h.shape[1] for h in hs]
        c = hs[0].shape[0]
        joint = T.concat(hs, axis=1)
        joint = T.reshape(joint, (1, c, sum(lens)))
        joint = self.bn(joint)
        joint = T.reshape(joint, (c, sum(lens)))
        out, off = [], 0
        for ln in lens:
            out.append(T.relu(joint[:, off:off + ln]))
            off += ln
        return out


class LanguageClassifier(nn.Module):
    """Four conv1d+batchnorm+relu blocks, mean-pool, two linear layers."""

    BLOCKS = 4

    def __init__(self, dim: int, languages: int, rng: np.random.Generator,
                 dtype=np.float64):
        super().__init__()
        self.dim, self.languages = dim, languages
        self.blocks = nn.ModuleList(
            [_ConvBlock(dim, rng, dtype) for _ in range(self.BLOCKS)])
        self.fc1 = nn.Linear(dim, dim, rng, dtype)
        self.fc2 = nn.Linear(dim, languages, rng, dtype)

    def forward(self, e_av: Tensor) -> Tensor:
        """(n + T, d) encoder output -> (m,) language logits."""
        if e_av.ndim != 2 or e_av.shape[1] != self.dim:
            raise DimensionError(
                f"classifier expects (rows, {self.dim}), got shape {e_av.shape}")
        x = T.transpose(e_av, (1, 0))  # channels-first for the conv stack
        for block in self.blocks:
            x = block(x)
        pooled = T.reshape(T.reduce_mean(x, axis=1), (1, self.dim))
        h = T.relu(self.fc1(pooled))
        return T.reshape(self.fc2(h), (self.languages,))

    def forward_batch(self, e_avs: list) -> Tensor:
        """Batched logits (B, m) with batch-wide normalization statistics."""
        for e in e_avs:
            if e.ndim != 2 or e.shape[1] != self.dim:
                raise DimensionError(
                    f"classifier expects (rows, {self.dim}), got shape {e.shape}")
        xs = [T.transpose(e, (1, 0)) for e in e_avs]
        for block in self.blocks:
            xs = block.forward_many(xs)
        pooled = T.concat(
            [T.reshape(T.reduce_mean(x, axis=1), (1, self.dim)) for x in xs],
            axis=0)
        h = T.relu(self.fc1(pooled))
        return self.fc2(h)  # (B, m)


def class_loss(logits: Tensor, label: LanguageLabel) -> Tensor:
    """Cross-entropy of the ground-truth language under the logits."""
    m = logits.shape[0]
    if not 0 <= label.id < m:
        raise LabelError(f"language id {label.id} outside [0, {m})")
    return -T.log_softmax(logits, axis=-1)[label.id]


def predict_language(logits: Tensor) -> LanguageLabel:
    """Argmax language; ties resolve to the lowest id."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    idx = int(np.argmax(data))
    return LanguageLabel(idx, f"L{idx}")
