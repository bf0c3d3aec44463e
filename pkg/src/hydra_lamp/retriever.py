"""BM25 retrieval over a single user's history."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .datamodel import HistoryItem
from .text import DEFAULT_TOKENIZER, Tokenizer

K1 = 1.2
B = 0.75


@dataclass(frozen=True)
class HistoryIndex:
    """Inverted index; postings are stored CSR-style, sorted by ordinal."""

    terms: dict[str, int]          # term -> row into starts/ends
    starts: np.ndarray
    ends: np.ndarray
    post_docs: np.ndarray
    post_tf: np.ndarray
    doc_lengths: np.ndarray
    avg_doc_len: float
    n_docs: int
    tokenizer: Tokenizer

    def postings(self, term: str) -> list[tuple[int, int]]:
        row = self.terms.get(term)
        if row is None:
            return []
        sl = slice(self.starts[row], self.ends[row])
        return list(zip(self.post_docs[sl].tolist(), self.post_tf[sl].tolist()))

    def df(self, term: str) -> int:
        row = self.terms.get(term)
        return 0 if row is None else int(self.ends[row] - self.starts[row])

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_index_from_texts(docs: Sequence[str], tok: Tokenizer = DEFAULT_TOKENIZER) -> HistoryIndex:
    per_term: dict[str, list[tuple[int, int]]] = {}
    lengths = []
    for ordinal, text in enumerate(docs):
        tokens = tok(text)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            per_term.setdefault(term, []).append((ordinal, tf))
    terms, starts, ends, docs_flat, tf_flat = {}, [], [], [], []
    for row, (term, plist) in enumerate(sorted(per_term.items())):
        terms[term] = row
        starts.append(len(docs_flat))
        docs_flat += [o for o, _ in plist]
        tf_flat += [t for _, t in plist]
        ends.append(len(docs_flat))
    doc_lengths = np.array(lengths, dtype=np.float64)
    return HistoryIndex(
        terms=terms,
        starts=np.array(starts, dtype=np.int64),
        ends=np.array(ends, dtype=np.int64),
        post_docs=np.array(docs_flat, dtype=np.int64),
        post_tf=np.array(tf_flat, dtype=np.int64),
        doc_lengths=doc_lengths,
        avg_doc_len=float(doc_lengths.mean()) if len(lengths) else 0.0,
        n_docs=len(lengths),
        tokenizer=tok,
    )


def build_index(history: Sequence[HistoryItem], tok: Tokenizer = DEFAULT_TOKENIZER) -> HistoryIndex:
    """Index each behavior as its query text followed by its answer text."""
    return build_index_from_texts([h.text for h in history], tok)


def _query_rows(index: HistoryIndex, query: str):
    rows = sorted({index.terms[t] for t in index.tokenizer(query) if t in index.terms})
    rows = np.array(rows, dtype=np.int64)
    starts, ends = index.starts[rows], index.ends[rows]
    df = (ends - starts).astype(np.float64)
    idf = np.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0)
    return starts, ends, idf


def score_all(index: HistoryIndex, query: str, k1: float = K1, b: float = B) -> np.ndarray:
    if index.n_docs == 0:
        return np.zeros(0)
    starts, ends, idf = _query_rows(index, query)
    return _kernels.bm25(starts, ends, idf, index.post_docs, index.post_tf,
                         index.doc_lengths, index.avg_doc_len, k1, b, index.n_docs)


def bm25_score(index: HistoryIndex, query: str, item_ordinal: int,
               k1: float = K1, b: float = B) -> float:
    if not 0 <= item_ordinal < index.n_docs:
        raise IndexError(f"item ordinal {item_ordinal} outside [0, {index.n_docs})")
    return float(score_all(index, query, k1, b)[item_ordinal])


def rank(scores: np.ndarray, n: int, exclude: Iterable[int] = ()) -> list[tuple[int, float]]:
    """Top ``n`` by score descending, lower ordinal first on ties."""
    skip = set(exclude)
    order = sorted((o for o in range(len(scores)) if o not in skip),
                   key=lambda o: (-scores[o], o))
    return [(o, float(scores[o])) for o in order[:max(n, 0)]]


def retrieve_top(index: HistoryIndex, query: str, n: int, exclude: Iterable[int] = (),
                 k1: float = K1, b: float = B) -> list[tuple[int, float]]:
    return rank(score_all(index, query, k1, b), n, exclude)
