"""Tokenization and normalization shared by retrieval, metrics and labeling."""

from __future__ import annotations

import re
from dataclasses import dataclass

_WORD = re.compile(r"\w+", re.UNICODE)
_SENTINEL_WORD = re.compile(r"\[CLS\]|\[SEP\]|\w+", re.UNICODE)
_SPACE = re.compile(r"\s+", re.UNICODE)


@dataclass(frozen=True)
class Tokenizer:
    """Splits on unicode whitespace and punctuation boundaries."""

    lowercase: bool = True
    keep_sentinels: bool = False

    def __call__(self, text: str) -> list[str]:
        return self.tokenize(text)

    def tokenize(self, text: str) -> list[str]:
        if not text:
            return []
        pattern = _SENTINEL_WORD if self.keep_sentinels else _WORD
        tokens = pattern.findall(text)
        if self.lowercase:
            tokens = [t if t in ("[CLS]", "[SEP]") else t.lower() for t in tokens]
        return tokens


DEFAULT_TOKENIZER = Tokenizer()


def normalize_answer(text: str) -> str:
    """Trim, casefold and collapse internal whitespace."""
    return _SPACE.sub(" ", text.strip()).casefold()
