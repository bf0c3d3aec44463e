"""Domain types, JSONL ingestion, user splits and the LaMP task registry."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ParseError, SizeError, ValidationError
from .metrics import METRIC_IDS

log = logging.getLogger(__name__)

SCHEMA_HEADER = "schema-version: 1"

CATEGORICAL = "categorical"
ORDINAL = "ordinal"
GENERATION = "generation"
TASK_KINDS = (CATEGORICAL, ORDINAL, GENERATION)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: str
    label_set: tuple[str, ...]
    ppep_template: str
    aip_template: str
    pag_instruction: str
    metric_set: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValidationError(f"unknown task kind {self.kind!r}")
        if self.kind == GENERATION and self.label_set:
            raise ValidationError(f"{self.task_id}: generation tasks carry no label set")
        if self.kind != GENERATION and not self.label_set:
            raise ValidationError(f"{self.task_id}: {self.kind} task needs a label set")
        unknown = [m for m in self.metric_set if m not in METRIC_IDS]
        if unknown:
            raise ValidationError(f"{self.task_id}: unknown metrics {unknown}")

    @property
    def is_generation(self) -> bool:
        return self.kind == GENERATION


@dataclass(frozen=True)
class HistoryItem:
    item_id: str
    query_text: str
    answer_text: str

    @property
    def text(self) -> str:
        return f"{self.query_text} {self.answer_text}"


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    query: str
    gold: Optional[str]
    history: tuple[HistoryItem, ...] = ()

    def __post_init__(self):
        seen = set()
        for item in self.history:
            if item.item_id in seen:
                raise ValidationError(f"user {self.user_id}: duplicate item_id {item.item_id!r}")
            if not item.query_text:
                raise ValidationError(f"user {self.user_id}: item {item.item_id!r} has empty query text")
            seen.add(item.item_id)


@dataclass(frozen=True)
class Dataset:
    task: TaskSpec
    train_users: tuple[UserRecord, ...] = ()
    test_users: tuple[UserRecord, ...] = ()

    def __post_init__(self):
        ids = [u.user_id for u in self.train_users] + [u.user_id for u in self.test_users]
        if len(ids) != len(set(ids)):
            raise ValidationError("user ids must be unique and train/test must be disjoint")

    @property
    def all_users(self) -> tuple[UserRecord, ...]:
        return self.train_users + self.test_users


# -- task registry ---------------------------------------------------------

LAMP_2N_CATEGORIES = (
    "women", "religion", "politics", "style & beauty", "entertainment",
    "culture & arts", "sports", "science & technology", "travel", "business",
    "crime", "education", "healthy living", "parents", "food & drink",
)
LAMP_2M_TAGS = (
    "sci-fi", "based on a book", "comedy", "action", "twist ending",
    "dystopia", "dark comedy", "classic", "psychology", "fantasy", "romance",
    "thought-provoking", "social commentary", "violence", "true story",
)
RATINGS = ("1", "2", "3", "4", "5")
SYNTHETIC_LABELS = ("A", "B")

_AIP = "{profile}. {input}"

TASKS: dict[str, TaskSpec] = {
    "LaMP-2N": TaskSpec(
        "LaMP-2N", CATEGORICAL, LAMP_2N_CATEGORIES,
        'the category for the article: "{query}" is "{answer}"', _AIP,
        "Look at the following past articles this journalist has written and "
        "determine the most popular category they write in. Answer in the "
        "following form: most popular category: <category>",
        ("accuracy", "f1"),
    ),
    "LaMP-2M": TaskSpec(
        "LaMP-2M", CATEGORICAL, LAMP_2M_TAGS,
        'the tag for the movie: "{query}" is "{answer}"', _AIP,
        "Which tag does this movie relate to among the following tags? Just "
        "answer with the tag name without further explanation",
        ("accuracy", "f1"),
    ),
    "LaMP-3": TaskSpec(
        "LaMP-3", ORDINAL, RATINGS,
        '{answer} is the score for "{query}"', _AIP,
        "Based on this user's past reviews, what are the most common scores "
        "they give for positive and negative reviews? Answer in the following "
        "form: most common positive score: <most common positive score>, most "
        "common negative score:  <most common negative score>",
        ("mae", "rmse"),
    ),
    "LaMP-4": TaskSpec(
        "LaMP-4", GENERATION, (),
        '"{answer}" is the title for "{query}"', _AIP,
        "Given this author's previous articles, try to describe a template for "
        "their headlines. I want to be able to accurately predict the headline "
        "given one of their articles. Be specific about their style and "
        "wording; don't tell me anything generic.",
        ("rouge-1", "rouge-L", "bleu"),
    ),
    "LaMP-5": TaskSpec(
        "LaMP-5", GENERATION, (),
        '"{answer}" is the title for "{query}"',
        "{profile}. Following the given patterns {input}",
        "Given this author's previous publications, try to describe a template "
        "for their titles. I want to be able to accurately predict the title of "
        "one of the papers from the abstract. Only generate the template "
        "description, nothing else.",
        ("rouge-1", "rouge-L", "bleu"),
    ),
    "Synthetic": TaskSpec(
        "Synthetic", CATEGORICAL, SYNTHETIC_LABELS,
        'the label for the note: "{query}" is "{answer}"', _AIP,
        "Look at the following past notes this user has labeled and determine "
        "the label they use most often. Answer in the following form: most "
        "common label: <label>",
        ("accuracy", "f1"),
    ),
}


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise ValidationError(f"unknown task {task_id!r}; known: {sorted(TASKS)}") from None


# -- JSONL ingestion -------------------------------------------------------

def _record_from_json(obj: dict, lineno: int) -> tuple[UserRecord, str]:
    try:
        profile = obj.get("profile") or []
        history = tuple(
            HistoryItem(str(p["id"]), str(p["input"]), str(p.get("output") or ""))
            for p in profile
        )
        gold = obj.get("output")
        rec = UserRecord(str(obj["user_id"]), str(obj["input"]),
                         None if gold is None else str(gold), history)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}") from None
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"line {lineno}: missing or malformed field {exc}") from None
    if not rec.history:
        raise ValidationError(f"line {lineno}: user {rec.user_id!r} has an empty history")
    split = obj.get("split", "train")
    if split not in ("train", "test"):
        raise ValidationError(f"line {lineno}: unknown split {split!r}")
    return rec, split


def parse_lines(lines: Iterable[str], task: TaskSpec) -> Dataset:
    train, test = [], []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line == SCHEMA_HEADER:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")
        rec, split = _record_from_json(obj, lineno)
        if rec.user_id in seen:
            raise ValidationError(f"line {lineno}: duplicate user_id {rec.user_id!r}")
        seen.add(rec.user_id)
        (train if split == "train" else test).append(rec)
    return Dataset(task, tuple(train), tuple(test))


def load_dataset(path, task: TaskSpec) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, task)


def user_to_json(rec: UserRecord, split: str = "train") -> dict:
    return {
        "user_id": rec.user_id,
        "input": rec.query,
        "output": rec.gold,
        "profile": [
            {"id": h.item_id, "input": h.query_text, "output": h.answer_text}
            for h in rec.history
        ],
        "split": split,
    }


def dump_lines(ds: Dataset) -> list[str]:
    lines = [SCHEMA_HEADER]
    for split, users in (("train", ds.train_users), ("test", ds.test_users)):
        lines += [json.dumps(user_to_json(u, split), ensure_ascii=False, sort_keys=True)
                  for u in users]
    return lines


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text("\n".join(dump_lines(ds)) + "\n", encoding="utf-8")


# -- splitting -------------------------------------------------------------

def split_users(ds: Dataset, n_train: int, n_test: int, seed: int) -> Dataset:
    """Shuffle all users by ``seed``; the first ``n_train`` train, the next ``n_test`` test."""
    users = ds.all_users
    if n_train < 0 or n_test < 0 or n_train + n_test > len(users):
        raise SizeError(f"cannot split {len(users)} users into {n_train} train + {n_test} test")
    order = np.random.default_rng(seed).permutation(len(users))
    picked = [users[i] for i in order[: n_train + n_test]]
    return replace(ds, train_users=tuple(picked[:n_train]), test_users=tuple(picked[n_train:]))


# -- synthetic conflict task -----------------------------------------------

TOPICS = ("amber", "basil", "cobalt", "dune", "ember", "fjord", "garnet", "harbor")
FILLER = (
    "report", "update", "memo", "entry", "review", "summary", "brief", "story",
    "draft", "record", "item", "notice", "digest", "thread", "column", "sketch",
    "weekly", "local", "short", "long", "early", "late", "quiet", "loud",
)


@dataclass(frozen=True)
class SyntheticRule:
    """Hidden per-user rule: label = LABELS[(topic_parity + orientation) % 2]."""

    orientation: int

    def label(self, topic: str) -> str:
        return SYNTHETIC_LABELS[(TOPICS.index(topic) % 2 + self.orientation) % 2]


def synthetic_topic(text: str) -> Optional[str]:
    for tok in text.lower().split():
        if tok in TOPICS:
            return tok
    return None


def _synthetic_query(rng: np.random.Generator, topic: str) -> str:
    a, b, c = rng.choice(len(FILLER), size=3, replace=False)
    return f"{FILLER[a]} {topic} {FILLER[b]} {FILLER[c]}"


def make_synthetic_task(n_users: int, history_per_user: int = 20, seed: int = 0) -> Dataset:
    """Categorical task whose users disagree on identical queries.

    Users alternate between two orientations of one topic-to-label rule, and
    each consecutive pair shares its main query text, so every pair carries
    a query with opposite gold labels. No shared scorer can beat chance on
    those, while a per-user head can.
    """
    if n_users < 2:
        raise SizeError("synthetic task needs at least 2 users")
    rng = np.random.default_rng(seed)
    n_pairs = (n_users + 1) // 2
    shared_queries = [_synthetic_query(rng, TOPICS[rng.integers(len(TOPICS))]) for _ in range(n_pairs)]
    users = []
    for i in range(n_users):
        rule = SyntheticRule(orientation=i % 2)
        query = shared_queries[i // 2]
        history = []
        for j in range(history_per_user):
            topic = TOPICS[rng.integers(len(TOPICS))]
            q = _synthetic_query(rng, topic)
            history.append(HistoryItem(f"u{i}-h{j}", q, rule.label(topic)))
        users.append(UserRecord(f"u{i}", query, rule.label(synthetic_topic(query)), tuple(history)))
    return Dataset(TASKS["Synthetic"], tuple(users), ())


def conflict_queries(ds: Dataset) -> set[str]:
    """Query texts that occur under two users with different gold answers."""
    seen: dict[str, dict[str, str]] = {}
    for u in ds.all_users:
        pairs = [(u.query, u.gold)] + [(h.query_text, h.answer_text) for h in u.history]
        for q, g in pairs:
            if g is not None:
                seen.setdefault(q, {}).setdefault(u.user_id, g)
    return {q for q, by_user in seen.items() if len(set(by_user.values())) > 1}
