"""Response models installed into the simulator for offline runs."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .datamodel import SYNTHETIC_LABELS, Dataset, synthetic_topic

_SYNTH_ENTRY = re.compile(r'the label for the note: "([^"]*)" is "([^"]*)"')


def split_prompt(prompt: str) -> tuple[list[tuple[str, str]], str]:
    """(profile entries, input) for a synthetic-task RAG prompt."""
    entries = _SYNTH_ENTRY.findall(prompt)
    if not entries:
        return [], prompt
    return entries, prompt.rsplit('". ', 1)[-1]


@dataclass(frozen=True)
class SyntheticPreferenceOracle:
    """Label weights for the synthetic task.

    Every label starts at weight 1; each in-context behavior on the same
    topic as the input adds ``boost`` to its own label. The model therefore
    leans toward the user's habit when shown relevant history, yet still
    samples both labels often enough that picking among samples matters.
    """

    boost: float = 0.5

    @property
    def identity(self) -> str:
        return f"synthetic-boost={self.boost}"

    def __call__(self, prompt: str) -> dict[str, float]:
        entries, query = split_prompt(prompt)
        topic = synthetic_topic(query)
        weights = {lab: 1.0 for lab in SYNTHETIC_LABELS}
        for q, a in entries:
            if a in weights and topic is not None and synthetic_topic(q) == topic:
                weights[a] += self.boost
        return weights


class EchoOracle:
    """Answers with the gold of the user query the prompt ends with.

    When several records share a query text the first registration wins;
    test users are registered first since their queries are the ones scored.
    """

    def __init__(self, ds: Dataset):
        self._golds: dict[str, str] = {}
        for u in ds.test_users + ds.train_users:
            if u.gold is not None:
                self._golds.setdefault(u.query, u.gold)
            for h in u.history:
                self._golds.setdefault(h.query_text, h.answer_text)
        # longest first so a query that is a suffix of another never shadows it
        self._order = sorted(self._golds, key=len, reverse=True)
        self.identity = f"echo-{len(self._golds)}"

    def __call__(self, prompt: str) -> dict[str, float]:
        for q in self._order:
            if prompt.endswith(q):
                return {self._golds[q]: 1.0}
        return {"": 1.0}


class ConstantOracle:
    def __init__(self, answer: str):
        self.answer = answer
        self.identity = f"constant-{answer}"

    def __call__(self, prompt: str) -> dict[str, float]:
        return {self.answer: 1.0}
