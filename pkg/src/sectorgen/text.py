"""Tokenization shared by the template renderer, augmentation and the model."""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[-'&][a-z0-9]+)*|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization with punctuation split off."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def normalize(text: str) -> str:
    """Canonical form used to compare generated text with sector names."""
    return detokenize(tokenize(text))
