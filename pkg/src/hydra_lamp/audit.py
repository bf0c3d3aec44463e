"""JSONL audit dumps for intermediate artifacts."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Iterable


def _plain(rec):
    if dataclasses.is_dataclass(rec) and not isinstance(rec, type):
        return dataclasses.asdict(rec)
    return rec


def dumps_jsonl(records: Iterable) -> str:
    return "".join(json.dumps(_plain(r), ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def write_jsonl(path, records: Iterable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_jsonl(records), encoding="utf-8")
    return path


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
