import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydra_lamp.adapter import (
    AdapterConfig, argmax_first, best_of_b, gen_adapter_candidates, label_adapter_examples,
    sample_generations, score_generations,
)
from hydra_lamp.datamodel import TASKS, HistoryItem, UserRecord
from hydra_lamp.factorized import FactorizedModel, HeadParams, TextEncoderConfig
from hydra_lamp.llm import Simulator
from hydra_lamp.reranker import pair_input
from conftest import make_user


def test_candidate_count_and_gold_identity():
    user = make_user("u", 10, gold="Exact Gold  ")
    cands = gen_adapter_candidates(user)
    assert len(cands) == 11
    assert cands[0].query == user.query and cands[0].gold == "Exact Gold  "
    assert [c.gold for c in cands[1:]] == [h.answer_text for h in user.history]
    assert [c.item_ordinal for c in cands] == [None] + list(range(10))


def test_candidate_count_empty_history():
    # records reject empty histories, so build the degenerate case directly
    user = object.__new__(UserRecord)
    object.__setattr__(user, "user_id", "u")
    object.__setattr__(user, "query", "q")
    object.__setattr__(user, "gold", "g")
    object.__setattr__(user, "history", ())
    assert len(gen_adapter_candidates(user)) == 1


def test_sample_generations():
    task = TASKS["LaMP-2N"]
    sim = Simulator(task.label_set)
    hist = [HistoryItem("1", "news text", "sports")]
    assert len(sample_generations("q", hist, AdapterConfig(b=1), sim, task)) == 1
    a = sample_generations("q", hist, AdapterConfig(b=8, seed=3), sim, task)
    assert a == sample_generations("q", hist, AdapterConfig(b=8, seed=3), sim, task)
    assert len(a) == 8
    assert len(sample_generations("q", [], AdapterConfig(b=8), sim, task)) == 8


def test_label_examples():
    task = TASKS["LaMP-2N"]
    ex = label_adapter_examples("u", "q", "sports", ["sports", "crime"], task)
    assert [e.y for e in ex] == [1, 0]
    assert ex[0].x == pair_input("q", "sports")
    assert [e.y for e in label_adapter_examples("u", "q", "sports", ["a", "b"], task)] == [0, 0]
    gen = label_adapter_examples("u", "q", "the cat sat down", ["the cat sat", "dog"], TASKS["LaMP-4"])
    assert [e.y for e in gen] == [1, 0]


def test_argmax_tie_rule():
    assert argmax_first([0.2, 0.9, 0.9]) == 1
    assert argmax_first([0.3]) == 0
    with pytest.raises(ValueError):
        argmax_first([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9, 1.0]), min_size=1, max_size=10))
def test_argmax_monotone_invariance(scores):
    j = argmax_first(scores)
    for f in (np.exp, lambda v: 3 * v + 1, lambda v: v ** 3, np.arctan):
        assert argmax_first([float(f(s)) for s in scores]) == j
    assert scores[j] == max(scores) and all(s < scores[j] for s in scores[:j])


def test_best_of_b_single_and_membership():
    m = FactorizedModel(TextEncoderConfig(64, 4, 2), seed=0)
    m.ensure_head("u")
    assert best_of_b(m, "u", "q", ["only"]) == "only"
    gens = ["a", "b", "c", "d"]
    chosen = best_of_b(m, "u", "q", gens)
    assert chosen in gens
    assert chosen == gens[int(np.argmax(score_generations(m, "u", "q", gens)))]
    with pytest.raises(ValueError):
        best_of_b(m, "u", "q", [])


def test_best_of_b_equal_scores_picks_first():
    m = FactorizedModel(TextEncoderConfig(64, 4, 2), seed=0)
    m.heads["u"] = HeadParams.zeros(4)
    assert best_of_b(m, "u", "q", ["x", "y", "z"]) == "x"
