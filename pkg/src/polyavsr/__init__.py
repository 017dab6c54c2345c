"""Multilingual audio-visual speech recognition on a synthetic corpus.

A single prompt-tuned transformer shares its encoder across languages;
a language classifier over the encoded sequence supplies conditioning,
and training blends CTC, attention cross-entropy, and classification
losses with inverse-square-root language balancing.
"""

__version__ = "0.1.0"
