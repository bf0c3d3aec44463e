"""Prompt assembly for RAG (per-profile-entry + aggregated input) and PAG."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .datamodel import TASKS, HistoryItem, TaskSpec
from .errors import ConfigError

PROFILE_JOINER = ", and "


@dataclass(frozen=True)
class PromptBundle:
    ppep_strings: tuple[str, ...]
    aip: str


def _registered(task, needs: str = "ppep_template") -> TaskSpec:
    if isinstance(task, str):
        if task not in TASKS:
            raise ConfigError(f"no prompt templates for task {task!r}")
        task = TASKS[task]
    if not getattr(task, needs, ""):
        raise ConfigError(f"task {task.task_id!r} has no {needs}")
    return task


def ppep(task: TaskSpec, item: HistoryItem) -> str:
    return task.ppep_template.format(query=item.query_text, answer=item.answer_text)


def build_rag_prompt(task: TaskSpec, items: Sequence[HistoryItem], input_text: str) -> PromptBundle:
    task = _registered(task)
    strings = tuple(ppep(task, h) for h in items)
    if not strings:
        return PromptBundle((), input_text)
    aip = task.aip_template.format(profile=PROFILE_JOINER.join(strings), input=input_text)
    return PromptBundle(strings, aip)


def build_pag_summary_prompt(task: TaskSpec, history: Sequence[HistoryItem]) -> str:
    task = _registered(task, "pag_instruction")
    if not history:
        raise ValueError("PAG summary needs a non-empty history")
    lines = [task.pag_instruction, ""]
    lines += [f"{i + 1}. {ppep(task, h)}" for i, h in enumerate(history)]
    return "\n".join(lines)


def prepend_summary(summary: str, prompt: str) -> str:
    return f"{summary.strip()}. {prompt}" if summary.strip() else prompt
