"""Deterministic synthetic audio-visual corpus.

Each language owns a token inventory, a bigram transition table, and a
fixed audio/video pattern per token. Utterances concatenate per-token
patterns plus small Gaussian jitter, so the mapping from signal back to
token is learnable yet non-trivial. Everything derives from integer
seeds; regeneration is byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (AlignmentError, CapacityError, ConfigurationError,
                     ContractError, DegenerateSignalError)
from .vocab import Vocab

BLOB_MAGIC = b"PAVSBLOB"
MAX_VOCAB = 512


@dataclass
class CorpusConfig:
    languages: int = 3
    vocab_per_lang: int = 10
    overlap_fraction: float = 0.0
    frames_per_token: int = 4
    samples_per_frame: int = 4
    frame_height: int = 8
    frame_width: int = 8
    frame_channels: int = 1
    min_tokens: int = 3
    max_tokens: int = 8
    jitter_std: float = 0.05
    train_total: int = 600
    ratios: Optional[List[float]] = None
    valid_per_lang: int = 20
    test_per_lang: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.ratios is None:
            self.ratios = [1.0 / self.languages] * self.languages
        if len(self.ratios) != self.languages:
            raise ConfigurationError(
                f"{len(self.ratios)} ratios for {self.languages} languages")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigurationError(f"ratios sum to {sum(self.ratios)}, need 1.0")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ConfigurationError(
                f"overlap_fraction must lie in [0, 1], got {self.overlap_fraction}")
        if self.min_tokens < 1 or self.max_tokens < self.min_tokens:
            raise ConfigurationError(
                f"bad token length range [{self.min_tokens}, {self.max_tokens}]")


@dataclass
class LanguageSpec:
    lang_id: int
    token_ids: List[int]           # vocabulary ids of this language's tokens
    transition: np.ndarray         # (k, k) row-stochastic bigram table
    audio_patterns: Dict[int, np.ndarray]   # token id -> (f * k_a,) float32
    video_patterns: Dict[int, np.ndarray]   # token id -> (f, H, W, C) float32


@dataclass
class Utterance:
    utt_id: str
    lang_id: int
    tokens: List[int]
    audio: np.ndarray
    video: np.ndarray


def _pattern_rng(seed: int, lang: int, slot: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, lang, slot, tag]))


def build_language_specs(cfg: CorpusConfig, vocab: Vocab) -> List[LanguageSpec]:
    """Per-language token sets, bigram tables, and signal patterns."""
    if vocab.size > MAX_VOCAB:
        raise CapacityError(f"vocabulary of {vocab.size} exceeds cap {MAX_VOCAB}")
    k = cfg.vocab_per_lang
    shared = int(round(cfg.overlap_fraction * k))
    specs: List[LanguageSpec] = []
    frame_len = cfg.frames_per_token * cfg.samples_per_frame
    vid_shape = (cfg.frames_per_token, cfg.frame_height, cfg.frame_width,
                 cfg.frame_channels)
    base = vocab.first_content
    for lang in range(cfg.languages):
        own = k - shared
        ids = list(range(base, base + shared)) + \
            list(range(base + shared + lang * own,
                       base + shared + (lang + 1) * own))
        if ids and ids[-1] >= vocab.size:
            raise CapacityError(
                f"language {lang} needs token id {ids[-1]}, vocab has {vocab.size}")
        rng = _pattern_rng(cfg.seed, lang, 0, 0)
        rows = rng.uniform(0.1, 1.0, size=(k, k))
        transition = rows / rows.sum(axis=1, keepdims=True)
        audio_patterns, video_patterns = {}, {}
        for slot, tok in enumerate(ids):
            a_rng = _pattern_rng(cfg.seed, lang, slot, 1)
            v_rng = _pattern_rng(cfg.seed, lang, slot, 2)
            audio_patterns[tok] = a_rng.normal(0, 1, frame_len).astype(np.float32)
            video_patterns[tok] = v_rng.normal(0, 1, vid_shape).astype(np.float32)
        specs.append(LanguageSpec(lang, ids, transition, audio_patterns,
                                  video_patterns))
    return specs


def content_token_count(cfg: CorpusConfig) -> int:
    k = cfg.vocab_per_lang
    shared = int(round(cfg.overlap_fraction * k))
    return shared + cfg.languages * (k - shared)


def build_vocab(cfg: CorpusConfig) -> Vocab:
    total = content_token_count(cfg)
    if 5 + cfg.languages + total > MAX_VOCAB:
        raise CapacityError(
            f"{total} content tokens push vocabulary past cap {MAX_VOCAB}")
    return Vocab.build(cfg.languages, [f"w{j:03d}" for j in range(total)])


def sample_tokens(spec: LanguageSpec, cfg: CorpusConfig,
                  rng: np.random.Generator) -> List[int]:
    length = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    k = len(spec.token_ids)
    slots = [int(rng.integers(0, k))]
    for _ in range(length - 1):
        slots.append(int(rng.choice(k, p=spec.transition[slots[-1]])))
    return [spec.token_ids[s] for s in slots]


def render_utterance(spec: LanguageSpec, tokens: Sequence[int],
                     cfg: CorpusConfig, rng: np.random.Generator,
                     utt_id: str) -> Utterance:
    audio = np.concatenate([spec.audio_patterns[t] for t in tokens])
    video = np.concatenate([spec.video_patterns[t] for t in tokens], axis=0)
    audio = audio + rng.normal(0, cfg.jitter_std, audio.shape)
    video = video + rng.normal(0, cfg.jitter_std, video.shape)
    return Utterance(utt_id, spec.lang_id, list(tokens),
                     audio.astype(np.float32), video.astype(np.float32))


def sample_utterance(spec: LanguageSpec, cfg: CorpusConfig,
                     rng: np.random.Generator, utt_id: str = "") -> Utterance:
    return render_utterance(spec, sample_tokens(spec, cfg, rng), cfg, rng, utt_id)


def inject_noise(audio: np.ndarray, snr_db: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise at the requested signal-to-noise ratio."""
    if np.isinf(snr_db) and snr_db > 0:
        return audio.copy()
    power = float(np.mean(np.square(audio.astype(np.float64))))
    if power == 0.0:
        raise DegenerateSignalError(
            "cannot set an SNR against an all-zero signal")
    noise_power = power / (10.0 ** (snr_db / 10.0))
    noise = rng.normal(0.0, np.sqrt(noise_power), audio.shape)
    return (audio.astype(np.float64) + noise).astype(audio.dtype)


# -- binary blobs --------------------------------------------------------


def write_blob(fh, arr: np.ndarray) -> int:
    """Append one float32 array; returns its byte offset in the file."""
    offset = fh.tell()
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    fh.write(BLOB_MAGIC)
    fh.write(struct.pack("<BB", 1, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f4").tobytes())
    return offset


def read_blob(fh, offset: int) -> np.ndarray:
    fh.seek(offset)
    magic = fh.read(8)
    if magic != BLOB_MAGIC:
        raise ContractError(f"bad blob magic {magic!r} at offset {offset}")
    version, ndim = struct.unpack("<BB", fh.read(2))
    if version != 1:
        raise ContractError(f"unsupported blob version {version}")
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    return data.reshape(shape).copy()


# -- split generation ----------------------------------------------------


def largest_remainder_counts(total: int, ratios: Sequence[float]) -> List[int]:
    """Integer per-language counts that sum to total and match the ratios."""
    raw = [total * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    short = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _utt_rng(seed: int, utt_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{utt_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _split_plan(cfg: CorpusConfig) -> Dict[str, List[int]]:
    train = largest_remainder_counts(cfg.train_total, cfg.ratios)
    return {
        "train": train,
        "valid": [cfg.valid_per_lang] * cfg.languages,
        "test": [cfg.test_per_lang] * cfg.languages,
    }


def make_splits(cfg: CorpusConfig, out_dir: str) -> Dict[str, List[dict]]:
    """Generate and write train/valid/test; returns the manifests."""
    vocab = build_vocab(cfg)
    specs = build_language_specs(cfg, vocab)
    os.makedirs(out_dir, exist_ok=True)
    manifests: Dict[str, List[dict]] = {}
    for split, counts in _split_plan(cfg).items():
        records: List[dict] = []
        with open(os.path.join(out_dir, f"{split}.audio.bin"), "wb") as afh, \
                open(os.path.join(out_dir, f"{split}.video.bin"), "wb") as vfh:
            for lang, count in enumerate(counts):
                for serial in range(count):
                    utt_id = f"{split}_L{lang}_{serial:05d}"
                    rng = _utt_rng(cfg.seed, utt_id)
                    utt = sample_utterance(specs[lang], cfg, rng, utt_id)
                    records.append({
                        "utt_id": utt_id,
                        "lang": lang,
                        "tokens": utt.tokens,
                        "audio_offset": write_blob(afh, utt.audio),
                        "video_offset": write_blob(vfh, utt.video),
                        "samples": int(utt.audio.shape[0]),
                        "frames": int(utt.video.shape[0]),
                    })
        with open(os.path.join(out_dir, f"{split}.jsonl"), "w") as mfh:
            for rec in records:
                mfh.write(json.dumps(rec, sort_keys=True,
                                     separators=(",", ":")) + "\n")
        manifests[split] = records
    meta = {"format_version": 1, "config": asdict(cfg),
            "vocab_tokens": list(vocab.tokens),
            "token_ids_per_lang": [s.token_ids for s in specs]}
    with open(os.path.join(out_dir, "corpus.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifests


class CorpusReader:
    """Random access over one generated corpus directory."""

    def __init__(self, root: str):
        self.root = root
        with open(os.path.join(root, "corpus.json")) as fh:
            meta = json.load(fh)
        if meta.get("format_version") != 1:
            raise ContractError(
                f"unsupported corpus format {meta.get('format_version')}")
        self.config = CorpusConfig(**meta["config"])
        self.vocab = Vocab.build(self.config.languages,
                                 meta["vocab_tokens"][5 + self.config.languages:])
        if list(self.vocab.tokens) != meta["vocab_tokens"]:
            raise ContractError("stored vocabulary does not round-trip")
        self.token_ids_per_lang = meta["token_ids_per_lang"]
        self._manifests: Dict[str, List[dict]] = {}
        self._handles: Dict[Tuple[str, str], io.BufferedReader] = {}

    def manifest(self, split: str) -> List[dict]:
        if split not in self._manifests:
            path = os.path.join(self.root, f"{split}.jsonl")
            if not os.path.exists(path):
                raise ConfigurationError(f"no split {split!r} in {self.root}")
            with open(path) as fh:
                self._manifests[split] = [json.loads(ln) for ln in fh]
        return self._manifests[split]

    def _handle(self, split: str, kind: str):
        key = (split, kind)
        if key not in self._handles:
            self._handles[key] = open(
                os.path.join(self.root, f"{split}.{kind}.bin"), "rb")
        return self._handles[key]

    def load(self, split: str, record: dict) -> Utterance:
        audio = read_blob(self._handle(split, "audio"), record["audio_offset"])
        video = read_blob(self._handle(split, "video"), record["video_offset"])
        return Utterance(record["utt_id"], record["lang"],
                         list(record["tokens"]), audio, video)

    def close(self):
        for fh in self._handles.values():
            fh.close()
        self._handles.clear()


def token_language_oracle(reader: CorpusReader) -> Dict[int, int]:
    """Map each non-shared content token to its owning language.

    Shared tokens (present in multiple languages) are omitted, so the
    lookup stays an unambiguous ground-truth labeling.
    """
    owners: Dict[int, List[int]] = {}
    for lang, ids in enumerate(reader.token_ids_per_lang):
        for tok in ids:
            owners.setdefault(tok, []).append(lang)
    return {tok: langs[0] for tok, langs in owners.items() if len(langs) == 1}
