"""Word error rate and per-language evaluation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .errors import UndefinedMetricError


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    ref_arr = np.asarray(ref, dtype=np.int64)
    hyp_arr = np.asarray(hyp, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        sub = prev[:-1] + (hyp_arr != ref_arr[i - 1])
        dele = prev[1:] + 1
        best = np.minimum(sub, dele)
        # insertions propagate left to right, so this column stays a scan
        run = cur[0]
        for j in range(m):
            run = min(best[j], run + 1)
            cur[j + 1] = run
        prev, cur = cur, prev
    return int(prev[m])


def wer(ref: Sequence[int], hyp: Sequence[int]) -> float:
    """Edit distance normalized by reference length; empty refs are undefined."""
    if len(ref) == 0:
        raise UndefinedMetricError("WER undefined for an empty reference")
    return edit_distance(ref, hyp) / len(ref)


@dataclass
class MetricReport:
    per_language_wer: Dict[int, float]
    language_accuracy: float
    skipped: int = 0
    utterances: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def average_wer(self) -> float:
        if not self.per_language_wer:
            raise UndefinedMetricError("no per-language entries to average")
        return float(np.mean(list(self.per_language_wer.values())))

    def to_dict(self) -> dict:
        return {
            "per_language_wer": {str(k): v for k, v in
                                 sorted(self.per_language_wer.items())},
            "average_wer": self.average_wer,
            "language_accuracy": self.language_accuracy,
            "skipped": self.skipped,
            "utterances": self.utterances,
            **self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def corpus_wer(rows: List[dict]) -> Dict[int, float]:
    """Corpus-level WER per language: total edits over total reference length."""
    edits: Dict[int, int] = {}
    ref_len: Dict[int, int] = {}
    for row in rows:
        lang = row["lang"]
        edits[lang] = edits.get(lang, 0) + edit_distance(row["ref"], row["hyp"])
        ref_len[lang] = ref_len.get(lang, 0) + len(row["ref"])
    out: Dict[int, float] = {}
    for lang, e in edits.items():
        if ref_len[lang] == 0:
            raise UndefinedMetricError(
                f"language {lang} has empty total reference")
        out[lang] = e / ref_len[lang]
    return out


def format_table(rows: Dict[str, Dict[int, float]], languages: Sequence[int]) -> str:
    """Text table: one row per condition, per-language columns plus Avg."""
    header = ["condition"] + [f"L{k}" for k in languages] + ["Avg"]
    lines = []
    widths = [max(10, len(h) + 2) for h in header]
    lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("-" * sum(widths))
    for name, per_lang in rows.items():
        vals = [per_lang[k] for k in languages]
        avg = float(np.mean(vals))
        cells = [name] + [f"{v:.4f}" for v in vals] + [f"{avg:.4f}"]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)
