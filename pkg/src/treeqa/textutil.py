"""Shared tokenization for lexical scoring and answer metrics."""

from __future__ import annotations

import string

from .tree import SEPARATOR

# `$` is kept so currency tokens like `$300` survive edge stripping.
_EDGE_PUNCT = "".join(ch for ch in string.punctuation if ch != "$") + "‘’“”"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace (and the path separator), strip edge punctuation."""
    text = text.replace(SEPARATOR, " ").lower()
    tokens = []
    for raw in text.split():
        token = raw.strip(_EDGE_PUNCT)
        if token:
            tokens.append(token)
    return tokens


def normalize(text: str) -> str:
    """Canonical single-spaced lowercase form used by the fallback judge."""
    return " ".join(tokenize(text))
