"""Shared token inventory for CTC, the decoder, and the corpus.

Fixed layout: blank=0, pad=1, sos=2, eos=3, unk=4, one conditioning token
per language at 5..5+m-1, then content tokens. Everything downstream
assumes this ordering, so it never changes between runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import LabelError

BLANK, PAD, SOS, EOS, UNK = 0, 1, 2, 3, 4
_SPECIALS = ["<blank>", "<pad>", "<sos>", "<eos>", "<unk>"]


@dataclass(frozen=True)
class Vocab:
    tokens: tuple
    languages: int
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index",
                           {tok: i for i, tok in enumerate(self.tokens)})

    @classmethod
    def build(cls, languages: int, content: Sequence[str]) -> "Vocab":
        toks = list(_SPECIALS)
        toks += [f"<lang{k}>" for k in range(languages)]
        toks += list(content)
        if len(set(toks)) != len(toks):
            raise LabelError("duplicate token strings in vocabulary")
        return cls(tuple(toks), languages)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def first_content(self) -> int:
        return 5 + self.languages

    @property
    def content_ids(self) -> range:
        return range(self.first_content, self.size)

    def lang_id(self, lang: int) -> int:
        if not 0 <= lang < self.languages:
            raise LabelError(f"language {lang} outside [0, {self.languages})")
        return 5 + lang

    def is_lang(self, tok_id: int) -> bool:
        return 5 <= tok_id < self.first_content

    def id_of(self, token: str) -> int:
        got = self._index.get(token)
        if got is None:
            raise LabelError(f"unknown token {token!r}")
        return got

    def token_of(self, tok_id: int) -> str:
        if not 0 <= tok_id < self.size:
            raise LabelError(f"token id {tok_id} outside [0, {self.size})")
        return self.tokens[tok_id]

    def encode(self, tokens: Sequence[str]) -> list:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list:
        return [self.token_of(i) for i in ids]
