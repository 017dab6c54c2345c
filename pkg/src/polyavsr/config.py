"""Run configuration: one flat dataclass, JSON round-trip, flag overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import ConfigurationError


@dataclass
class RunConfig:
    corpus_dir: str = "corpus"
    out_dir: str = "runs/run0"
    # model dimensions
    d: int = 32
    n_prompts: int = 4
    enc_layers: int = 4
    dec_layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    audio_channels: int = 16
    visual_channels: List[int] = field(default_factory=lambda: [8, 16])
    # objective
    alpha: float = 0.1
    beta: float = 10.0
    balance: bool = True
    # decoding
    lambda_ctc: float = 0.1
    beam: int = 4
    max_decode_len: int = 16
    # optimization
    steps: int = 2000
    batch_size: int = 8
    lr: float = 2e-3
    warmup_frac: float = 0.05
    seed: int = 0
    precision: str = "float32"
    classifier_warmup_steps: int = 0
    freeze_backbone: bool = False
    train_noise_snr_db: Optional[float] = None
    log_interval: int = 50
    checkpoint_interval: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(
                f"precision must be float32 or float64, got {self.precision!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be non-negative, got {self.beta}")
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ConfigurationError(
                f"lambda_ctc must lie in [0, 1], got {self.lambda_ctc}")
        if self.d % self.heads != 0:
            raise ConfigurationError(
                f"width {self.d} not divisible by {self.heads} heads")
        if self.n_prompts < 0:
            raise ConfigurationError(f"n_prompts must be >= 0, got {self.n_prompts}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[dict] = None)\
            -> "RunConfig":
        """Config file first, then explicit flag overrides on top."""
        data: dict = {}
        if path:
            with open(path) as fh:
                data.update(json.load(fh))
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise ConfigurationError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, val in (overrides or {}).items():
            if val is not None:
                data[key] = val
        return cls(**data)
