"""Generation selector: candidate pairs, b-sample generation, labeling, best-of-b."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import factorized as fm
from .datamodel import HistoryItem, TaskSpec, UserRecord
from .factorized import FactorizedModel, TrainConfig
from .llm import DEFAULT_ROUGE_THRESHOLD, GenerationRequest, generate, label_for_task
from .prompts import build_rag_prompt
from .reranker import pair_input


@dataclass(frozen=True)
class AdapterConfig:
    b: int = 8
    temperature: float = 1.0
    max_tokens: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be >= 1")


@dataclass(frozen=True)
class AdapterExample:
    user_id: str
    x: str
    y: int


@dataclass(frozen=True)
class AdapterQuery:
    """One (query, gold) pair; ``item_ordinal`` marks a history-derived pair."""

    query: str
    gold: Optional[str]
    item_ordinal: Optional[int] = None


def gen_adapter_candidates(user: UserRecord) -> list[AdapterQuery]:
    out = [AdapterQuery(user.query, user.gold, None)]
    out += [AdapterQuery(h.query_text, h.answer_text, i) for i, h in enumerate(user.history)]
    return out


def sample_generations(query: str, reranked: Sequence[HistoryItem], cfg: AdapterConfig,
                       backend, task: TaskSpec, seed: Optional[int] = None) -> list[str]:
    prompt = build_rag_prompt(task, reranked, query).aip
    req = GenerationRequest(prompt, cfg.b, cfg.temperature, cfg.max_tokens,
                            cfg.seed if seed is None else seed)
    return generate(req, backend)


def label_adapter_examples(user_id: str, query: str, gold: str, generations: Sequence[str],
                           task: TaskSpec, threshold: float = DEFAULT_ROUGE_THRESHOLD
                           ) -> list[AdapterExample]:
    return [AdapterExample(user_id, pair_input(query, g), label_for_task(task, g, gold, threshold))
            for g in generations]


def train_adapter(examples: Sequence[AdapterExample], model: FactorizedModel,
                  cfg: TrainConfig) -> list[float]:
    return fm.train(model, [(e.user_id, e.x, e.y) for e in examples], cfg)


def fit_adapter_head(model: FactorizedModel, user_id: str, examples: Sequence[AdapterExample],
                     cfg: TrainConfig):
    return fm.fit_new_head(model, user_id, [(e.x, e.y) for e in examples], cfg)


def argmax_first(scores: Sequence[float]) -> int:
    """Index of the largest score; the lowest index wins ties."""
    if len(scores) == 0:
        raise ValueError("no candidates to choose from")
    best = 0
    for j in range(1, len(scores)):
        if scores[j] > scores[best]:
            best = j
    return best


def score_generations(model: FactorizedModel, user_id: str, query: str,
                      generations: Sequence[str]) -> np.ndarray:
    return fm.predict_many(model, user_id, [pair_input(query, g) for g in generations])


def best_of_b(model: FactorizedModel, user_id: str, query: str,
              generations: Sequence[str]) -> str:
    if not generations:
        raise ValueError("best_of_b needs at least one generation")
    scores = score_generations(model, user_id, query, generations)
    return generations[argmax_first(scores)]
