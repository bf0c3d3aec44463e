"""Content-addressed cache of LLM responses, keyed per sample index."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Optional

from .llm import HTTP_OPENAI, GenerationRequest, generate

log = logging.getLogger(__name__)


def cache_key(identity: str, req: GenerationRequest, index: int) -> str:
    blob = json.dumps([identity, req.prompt, req.temperature, req.max_tokens, req.seed, index],
                      ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class LlmCache:
    """In-memory store, optionally persisted as one JSON file per key."""

    def __init__(self, directory: Optional[os.PathLike] = None, enabled: bool = True):
        self.enabled = enabled
        self.directory = Path(directory) if directory else None
        self._mem: dict[str, str] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        if not self.enabled:
            return None
        with self._lock:
            value = self._mem.get(key)
            if value is None and self.directory is not None:
                value = self._read(key)
            if value is None:
                self.misses += 1
            else:
                self._mem[key] = value
                self.hits += 1
            return value

    def _read(self, key: str) -> Optional[str]:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            if obj["key"] != key or not isinstance(obj["response"], str):
                raise ValueError("key mismatch")
            return obj["response"]
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            log.warning("ignoring corrupt cache entry %s (%s)", path, exc)
            return None

    def put(self, key: str, response: str) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._mem[key] = response
            if self.directory is not None:
                path = self._path(key)
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps({"key": key, "response": response}, ensure_ascii=False),
                               encoding="utf-8")
                tmp.replace(path)


class CachedBackend:
    """Wraps a backend; a request is served from cache only if every sample is present."""

    def __init__(self, backend, cache: LlmCache, cache_greedy_http: bool = True):
        self.backend = backend
        self.cache = cache
        self.cache_greedy_http = cache_greedy_http
        self.kind = backend.kind

    def identity(self) -> str:
        return self.backend.identity()

    def _bypass(self, req: GenerationRequest) -> bool:
        return (not self.cache.enabled
                or (self.kind == HTTP_OPENAI and req.temperature == 0 and not self.cache_greedy_http))

    def generate(self, req: GenerationRequest) -> list[str]:
        if self._bypass(req):
            return generate(req, self.backend)
        ident = self.identity()
        keys = [cache_key(ident, req, j) for j in range(req.n_samples)]
        got = [self.cache.get(k) for k in keys]
        if all(v is not None for v in got):
            return got
        fresh = generate(req, self.backend)
        for k, v in zip(keys, fresh):
            self.cache.put(k, v)
        return fresh
