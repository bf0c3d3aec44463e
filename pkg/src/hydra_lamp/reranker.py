"""Usefulness reranker: candidate construction, LLM labeling, training, top-k selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import factorized as fm
from .datamodel import HistoryItem, TaskSpec, UserRecord
from .errors import BackendError
from .factorized import FactorizedModel, TrainConfig
from .llm import DEFAULT_ROUGE_THRESHOLD, GenerationRequest, generate, label_for_task
from .prompts import build_rag_prompt
from .retriever import HistoryIndex, build_index, retrieve_top

log = logging.getLogger(__name__)

MAIN_QUERY = "main_query"
SAMPLED_HISTORY = "sampled_history"


@dataclass(frozen=True)
class RerankConfig:
    M: int = 4
    N: int = 20
    k: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not 0 <= self.k <= self.N:
            raise ValueError("need 0 <= k <= N")


@dataclass(frozen=True)
class RerankerCandidate:
    user_id: str
    query: str
    gold: str
    item: HistoryItem
    provenance: str


@dataclass(frozen=True)
class RerankerExample:
    user_id: str
    x: str
    y: int
    provenance: str
    item_id: str = ""


def pair_input(query: str, other: str) -> str:
    return f"[CLS] {query} [SEP] {other} [SEP]"


def gen_reranker_candidates(user: UserRecord, cfg: RerankConfig,
                            include_main: bool = True) -> list[RerankerCandidate]:
    """Main query with its top-M history, plus M sampled behaviors each with
    their top-M from the rest of the history.

    The main-query block is skipped when ``include_main`` is false or the
    user's gold answer is withheld (test users fitting on their history).
    """
    history = user.history
    if len(history) < 2:
        log.warning("skipping user %s: needs at least 2 history items", user.user_id)
        return []
    index = build_index(history)
    out: list[RerankerCandidate] = []
    if include_main and user.gold is not None:
        for ordinal, _ in retrieve_top(index, user.query, cfg.M):
            out.append(RerankerCandidate(user.user_id, user.query, user.gold, history[ordinal], MAIN_QUERY))
    rng = np.random.default_rng(fm.derive_seed(cfg.seed, "reranker-sample", user.user_id))
    sampled = rng.choice(len(history), size=min(cfg.M, len(history)), replace=False)
    for i in sampled.tolist():
        h = history[i]
        for ordinal, _ in retrieve_top(index, h.query_text, cfg.M, exclude={i}):
            out.append(RerankerCandidate(user.user_id, h.query_text, h.answer_text,
                                         history[ordinal], SAMPLED_HISTORY))
    return out


def candidate_count(n_history: int, M: int, include_main: bool = True) -> int:
    if n_history < 2:
        return 0
    main = min(M, n_history) if include_main else 0
    return main + min(M, n_history) * min(M, n_history - 1)


def label_reranker_candidates(cands: Sequence[RerankerCandidate], backend, task: TaskSpec,
                              temperature: float = 1.0, seed: int = 0,
                              threshold: float = DEFAULT_ROUGE_THRESHOLD,
                              max_tokens: int = 512) -> list[RerankerExample]:
    """Ask the LLM to answer each candidate's query with only that behavior in context."""
    out = []
    for i, c in enumerate(cands):
        prompt = build_rag_prompt(task, [c.item], c.query).aip
        req = GenerationRequest(prompt, 1, temperature, max_tokens, seed)
        try:
            answer = generate(req, backend)[0]
        except BackendError as exc:
            raise type(exc)(f"labeling candidate {i}: {exc}") from exc
        y = label_for_task(task, answer, c.gold, threshold)
        out.append(RerankerExample(c.user_id, pair_input(c.query, c.item.text), y,
                                   c.provenance, c.item.item_id))
    return out


def train_reranker(examples: Sequence[RerankerExample], model: FactorizedModel,
                   cfg: TrainConfig) -> list[float]:
    samples = [(e.user_id, e.x, e.y) for e in examples]
    return fm.train(model, samples, cfg)


def fit_reranker_head(model: FactorizedModel, user_id: str, examples: Sequence[RerankerExample],
                      cfg: TrainConfig):
    return fm.fit_new_head(model, user_id, [(e.x, e.y) for e in examples], cfg)


@dataclass(frozen=True)
class Scored:
    item: HistoryItem
    ordinal: int
    bm25_rank: int
    bm25: float
    score: float


def rerank_scored(model: FactorizedModel, user_id: str, query: str,
                  history: Sequence[HistoryItem], cfg: RerankConfig,
                  exclude=(), index: Optional[HistoryIndex] = None) -> list[Scored]:
    """BM25 top-N rescored by the user's head, best first (ties keep BM25 rank)."""
    model.head(user_id)
    if index is None:
        index = build_index(history)
    retrieved = retrieve_top(index, query, cfg.N, exclude)
    if not retrieved:
        return []
    items = [history[o] for o, _ in retrieved]
    scores = fm.predict_many(model, user_id, [pair_input(query, h.text) for h in items])
    scored = [Scored(items[r], o, r, s, float(scores[r])) for r, (o, s) in enumerate(retrieved)]
    return sorted(scored, key=lambda c: (-c.score, c.bm25_rank))


def select_topk(scored: Sequence[Scored], k: int) -> list[HistoryItem]:
    ranked = sorted(scored, key=lambda c: (-c.score, c.bm25_rank))
    return [c.item for c in ranked[:k]]


def rerank_topk(model: FactorizedModel, user_id: str, query: str,
                history: Sequence[HistoryItem], cfg: RerankConfig, exclude=(),
                index: Optional[HistoryIndex] = None) -> list[HistoryItem]:
    return select_topk(rerank_scored(model, user_id, query, history, cfg, exclude, index), cfg.k)


def bm25_topk(query: str, history: Sequence[HistoryItem], k: int, exclude=(),
              index: Optional[HistoryIndex] = None) -> list[HistoryItem]:
    if index is None:
        index = build_index(history)
    return [history[o] for o, _ in retrieve_top(index, query, k, exclude)]
