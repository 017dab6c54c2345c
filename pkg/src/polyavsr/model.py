"""Full model assembly: frontends, prompted encoder, and all three heads."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import nn
from . import tensor as T
from .classifier import LanguageClassifier
from .config import RunConfig
from .corpus import CorpusConfig
from .decoder import TransformerDecoder
from .encoder import PromptBank, PromptEncoder
from .errors import ConfigurationError
from .frontends import AudioFrontend, VisualFrontend, Fusion
from .tensor import Tensor
from .vocab import Vocab


def _audio_strides(factor: int) -> list:
    strides = []
    while factor > 1:
        if factor % 2:
            raise ConfigurationError(
                f"audio downsample factor must be a power of two, got {factor}")
        strides.append(2)
        factor //= 2
    return strides or [1]


class AvsrModel(nn.Module):
    """Single multilingual recognizer over fused audio-visual features."""

    def __init__(self, cfg: RunConfig, corpus_cfg: CorpusConfig, vocab: Vocab,
                 dtype=np.float32):
        super().__init__()
        self.dtype = dtype
        self.languages = corpus_cfg.languages
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d
        self.audio_front = AudioFrontend(
            d, rng, strides=_audio_strides(corpus_cfg.samples_per_frame),
            channels=cfg.audio_channels, dtype=dtype)
        self.visual_front = VisualFrontend(
            d, rng, height=corpus_cfg.frame_height,
            width=corpus_cfg.frame_width,
            in_channels=corpus_cfg.frame_channels,
            channels=tuple(cfg.visual_channels), dtype=dtype)
        self.fusion = Fusion(d, rng, dtype)
        self.encoder = PromptEncoder(d, cfg.enc_layers, cfg.heads, cfg.ff_mult,
                                     rng, dtype)
        self.prompts = PromptBank(cfg.n_prompts, d, cfg.enc_layers,
                                  seed=cfg.seed + 1, dtype=dtype)
        self.classifier = LanguageClassifier(d, corpus_cfg.languages, rng, dtype)
        self.decoder = TransformerDecoder(d, vocab, cfg.dec_layers, cfg.heads,
                                          cfg.ff_mult, rng, dtype)
        self.ctc_head = nn.Linear(d, vocab.size, rng, dtype)

    @property
    def prompt_rows(self) -> int:
        return self.prompts.count

    def encode(self, audio: np.ndarray, video: np.ndarray) -> Tensor:
        """Raw signals -> e_av of shape (n + T, d)."""
        f_a = self.audio_front(Tensor(np.asarray(audio, dtype=self.dtype)))
        f_v = self.visual_front(Tensor(np.asarray(video, dtype=self.dtype)))
        return self.encoder.encode(self.fusion(f_a, f_v), self.prompts)

    def encode_promptless(self, audio: np.ndarray, video: np.ndarray) -> Tensor:
        f_a = self.audio_front(Tensor(np.asarray(audio, dtype=self.dtype)))
        f_v = self.visual_front(Tensor(np.asarray(video, dtype=self.dtype)))
        return self.encoder.encode_plain(self.fusion(f_a, f_v))

    def ctc_log_probs(self, e_av: Tensor) -> Tensor:
        """Per-frame token log-distributions over the feature rows only."""
        feats = e_av[self.prompt_rows:]
        return T.log_softmax(self.ctc_head(feats), axis=-1)

    def set_trainable(self, groups: Optional[Sequence[str]] = None) -> list:
        """Mark parameter groups trainable; returns the trainable tensors.

        ``groups`` of None selects everything. Group names follow the
        top-level attribute names (audio_front, visual_front, fusion,
        encoder, prompts, classifier, decoder, ctc_head).
        """
        known = ("audio_front", "visual_front", "fusion", "encoder",
                 "prompts", "classifier", "decoder", "ctc_head")
        if groups is None:
            groups = known
        bad = set(groups) - set(known)
        if bad:
            raise ConfigurationError(f"unknown parameter groups {sorted(bad)}")
        chosen: list = []
        for name in known:
            module = getattr(self, name)
            on = name in groups
            for p in module.parameters():
                p.requires_grad = on
                if on:
                    chosen.append(p)
        return chosen


def build_model(cfg: RunConfig, corpus_cfg: CorpusConfig, vocab: Vocab) -> AvsrModel:
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    return AvsrModel(cfg, corpus_cfg, vocab, dtype)
