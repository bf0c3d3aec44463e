"""Accuracy, macro-F1, MAE/RMSE, ROUGE-1, ROUGE-L and BLEU."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .text import DEFAULT_TOKENIZER, normalize_answer

METRIC_IDS = ("accuracy", "f1", "mae", "rmse", "rouge-1", "rouge-L", "bleu")
RATIO_METRICS = ("accuracy", "f1", "rouge-1", "rouge-L", "bleu")
MIDPOINT_RATING = 3

_tok = DEFAULT_TOKENIZER


def _check_pair(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise ValueError("no examples to score")


def accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    _check_pair(preds, golds)
    hits = sum(normalize_answer(p) == normalize_answer(g) for p, g in zip(preds, golds))
    return hits / len(preds)


def macro_f1(preds: Sequence[str], golds: Sequence[str], label_set: Sequence[str]) -> float:
    """Unweighted mean of per-class F1 over ``label_set``.

    Predictions outside the label set count as wrong for every class (LLM
    outputs are free text); gold labels outside it are an error. A class
    with no support and no predictions contributes 0.
    """
    _check_pair(preds, golds)
    labels = [normalize_answer(l) for l in label_set]
    known = set(labels)
    P = [normalize_answer(p) for p in preds]
    G = [normalize_answer(g) for g in golds]
    bad = sorted({g for g in G if g not in known})
    if bad:
        raise ValueError(f"gold labels outside label set: {bad}")
    total = 0.0
    for lab in labels:
        tp = sum(p == lab and g == lab for p, g in zip(P, G))
        fp = sum(p == lab and g != lab for p, g in zip(P, G))
        fn = sum(p != lab and g == lab for p, g in zip(P, G))
        denom = 2 * tp + fp + fn
        total += 2 * tp / denom if denom else 0.0
    return total / len(labels)


_INT = re.compile(r"-?\d+")


def parse_rating(text: str) -> int:
    """First integer in ``text``; unparseable text maps to the midpoint rating."""
    m = _INT.search(str(text))
    return int(m.group()) if m else MIDPOINT_RATING


def mae_rmse(preds: Sequence, golds: Sequence) -> tuple[float, float]:
    _check_pair(preds, golds)
    p = np.array([parse_rating(x) for x in preds], dtype=float)
    g = np.array([parse_rating(x) for x in golds], dtype=float)
    err = p - g
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    precision = overlap / n_cand
    recall = overlap / n_ref
    return 2 * precision * recall / (precision + recall)


def rouge1(cand: str, ref: str) -> float:
    c, r = _tok(cand), _tok(ref)
    overlap = sum((Counter(c) & Counter(r)).values())
    return _f1(overlap, len(c), len(r))


def _token_ids(a: list[str], b: list[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    ia = np.array([vocab.setdefault(t, len(vocab)) for t in a], dtype=np.int64)
    ib = np.array([vocab.setdefault(t, len(vocab)) for t in b], dtype=np.int64)
    return ia, ib


def lcs_length(a: list[str], b: list[str]) -> int:
    ia, ib = _token_ids(a, b)
    return int(_kernels.lcs_length(ia, ib))


def rougeL(cand: str, ref: str) -> float:
    c, r = _tok(cand), _tok(ref)
    return _f1(lcs_length(c, r), len(c), len(r))


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(cand: str, ref: str, max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights and brevity penalty.

    Orders ``n >= 2`` with no clipped matches use the add-one estimate
    ``1 / (count + 1)``; no unigram match at all gives 0.
    """
    c, r = _tok(cand), _tok(ref)
    if not c or not r:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(c, n)
        total = sum(cand_counts.values())
        matched = sum((cand_counts & _ngrams(r, n)).values())
        if matched == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1)
        else:
            precision = matched / total
        log_sum += math.log(precision) / max_n
    bp = 1.0 if len(c) >= len(r) else math.exp(1.0 - len(r) / len(c))
    return bp * math.exp(log_sum)


def _mean(fn, preds, golds) -> float:
    _check_pair(preds, golds)
    return float(np.mean([fn(p, g) for p, g in zip(preds, golds)]))


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    n_examples: int = 0

    def __post_init__(self):
        for name, v in self.values.items():
            if name not in METRIC_IDS:
                raise ValueError(f"unknown metric {name!r}")
            if name in RATIO_METRICS and not (0.0 <= v <= 1.0 + 1e-12):
                raise ValueError(f"{name}={v} outside [0, 1]")
            if name not in RATIO_METRICS and v < 0:
                raise ValueError(f"{name}={v} is negative")

    def to_text(self) -> str:
        lines = [f"n_examples: {self.n_examples}"]
        lines += [f"{k}: {self.values[k]:.6f}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"n_examples": self.n_examples, "metrics": self.values},
                          sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        return cls(dict(obj["metrics"]), int(obj["n_examples"]))

    def display(self) -> str:
        """Human view; BLEU shown on the 0-100 scale."""
        parts = []
        for k in sorted(self.values):
            v = self.values[k] * 100 if k == "bleu" else self.values[k]
            parts.append(f"{k}={v:.4f}")
        return f"n={self.n_examples} " + " ".join(parts)


def evaluate(metric_set: Sequence[str], preds: Sequence[str], golds: Sequence[str],
             label_set: Optional[Sequence[str]] = None) -> MetricReport:
    values: dict[str, float] = {}
    for m in metric_set:
        if m == "accuracy":
            values[m] = accuracy(preds, golds)
        elif m == "f1":
            values[m] = macro_f1(preds, golds, label_set or sorted(set(golds)))
        elif m in ("mae", "rmse"):
            mae, rmse = mae_rmse(preds, golds)
            values[m] = mae if m == "mae" else rmse
        elif m == "rouge-1":
            values[m] = _mean(rouge1, preds, golds)
        elif m == "rouge-L":
            values[m] = _mean(rougeL, preds, golds)
        elif m == "bleu":
            values[m] = _mean(bleu, preds, golds)
        else:
            raise ValueError(f"unknown metric {m!r}")
    return MetricReport(values, len(preds))
