"""Black-box LLM access: request type, simulator, OpenAI-compatible client, labeling."""

from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence

import httpx

from .errors import ConfigError, TransportError
from .metrics import rouge1
from .text import normalize_answer

log = logging.getLogger(__name__)

API_KEY_ENV = "HYDRA_API_KEY"
SIMULATOR = "simulator"
HTTP_OPENAI = "http_openai_compatible"
BACKEND_KINDS = (HTTP_OPENAI, SIMULATOR)
DEFAULT_ROUGE_THRESHOLD = 0.5


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    n_samples: int = 1
    temperature: float = 1.0
    max_tokens: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class Backend(Protocol):
    kind: str

    def generate(self, req: GenerationRequest) -> list[str]: ...

    def identity(self) -> str: ...


# -- simulator -------------------------------------------------------------

Oracle = Callable[[str], Mapping[str, float]]

_QUOTED_TITLE = re.compile(r'"([^"]+)" is the title for')


def _unit_hash(*parts) -> float:
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big") / 2.0 ** 64


class Simulator:
    """Deterministic stand-in for a sampled black-box LLM.

    Each response is a pure function of ``(prompt, seed, sample index)``.
    The response distribution comes from ``oracle(prompt)`` when installed,
    otherwise from a templated default: labels weighted by how often they
    occur in the prompt for classification tasks, or short spans of the
    input and copied profile titles for generation tasks.
    """

    kind = SIMULATOR

    def __init__(self, label_set: Sequence[str] = (), oracle: Optional[Oracle] = None):
        self.label_set = tuple(label_set)
        self.oracle = oracle
        self.calls = 0
        self._lock = threading.Lock()

    def identity(self) -> str:
        tag = getattr(self.oracle, "identity", None)
        return f"simulator:{','.join(self.label_set)}:{tag or ('oracle' if self.oracle else 'default')}"

    def response_weights(self, prompt: str) -> list[tuple[str, float]]:
        if self.oracle is not None:
            weights = list(self.oracle(prompt).items())
        elif self.label_set:
            weights = []
            for lab in self.label_set:
                hits = len(re.findall(r"(?<!\w)" + re.escape(lab) + r"(?!\w)", prompt))
                weights.append((lab, 1.0 + hits))
        else:
            weights = self._generation_weights(prompt)
        weights = [(r, float(w)) for r, w in weights if w > 0]
        if not weights:
            weights = [("", 1.0)]
        return weights

    @staticmethod
    def _generation_weights(prompt: str) -> list[tuple[str, float]]:
        tail = prompt.rsplit(". ", 1)[-1]
        words = tail.split()
        out: dict[str, float] = {}
        if words:
            out[" ".join(words[:6])] = 2.0
            out[" ".join(words[1:8])] = 1.0
            out[" ".join(words[-6:])] = 1.0
        for title in _QUOTED_TITLE.findall(prompt):
            out[title] = out.get(title, 0.0) + 0.5
        return list(out.items())

    def generate(self, req: GenerationRequest) -> list[str]:
        with self._lock:
            self.calls += 1
        weights = self.response_weights(req.prompt)
        responses = [r for r, _ in weights]
        if req.temperature == 0:
            best = max(range(len(weights)), key=lambda i: (weights[i][1], -i))
            picks = [best] * req.n_samples
        else:
            w = [x ** (1.0 / req.temperature) for _, x in weights]
            total = sum(w)
            cdf, acc = [], 0.0
            for x in w:
                acc += x / total
                cdf.append(acc)
            picks = []
            for j in range(req.n_samples):
                u = _unit_hash(req.seed, j, req.prompt)
                picks.append(next((i for i, c in enumerate(cdf) if u < c), len(cdf) - 1))
        return [_truncate(responses[i], req.max_tokens) for i in picks]


def _truncate(text: str, max_tokens: int) -> str:
    words = text.split(" ")
    return text if len(words) <= max_tokens else " ".join(words[:max_tokens])


# -- OpenAI-compatible HTTP backend ----------------------------------------

class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free."""

    def __init__(self, rate: float, capacity: Optional[float] = None,
                 clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(rate, 1.0)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class OpenAIChatBackend:
    kind = HTTP_OPENAI
    RETRY_STATUS = {408, 409, 429}

    def __init__(self, base_url: str, model: str, api_key: Optional[str] = None,
                 timeout: float = 60.0, max_attempts: int = 5, backoff: float = 0.5,
                 max_in_flight: int = 4, requests_per_second: float = 0.0,
                 transport: Optional[httpx.BaseTransport] = None, sleep=time.sleep,
                 jitter_seed: int = 0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self._sleep = sleep
        self._jitter = random.Random(jitter_seed)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._bucket = TokenBucket(requests_per_second, sleep=sleep)
        self._client_args = {"timeout": timeout, "transport": transport}
        self._client: Optional[httpx.Client] = None
        self.calls = 0

    def identity(self) -> str:
        return f"http:{self.base_url}:{self.model}"

    def _http(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(**{k: v for k, v in self._client_args.items() if v is not None})
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def _post(self, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self.api_key}"}
        url = f"{self.base_url}/chat/completions"
        last = None
        for attempt in range(1, self.max_attempts + 1):
            self._bucket.acquire()
            try:
                with self._slots:
                    self.calls += 1
                    resp = self._http().post(url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code < 300:
                    return resp.json()
                if 400 <= resp.status_code < 500 and resp.status_code not in self.RETRY_STATUS:
                    raise ConfigError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                last = f"HTTP {resp.status_code}"
            if attempt < self.max_attempts:
                delay = self.backoff * 2 ** (attempt - 1)
                self._sleep(delay * (1.0 + 0.25 * self._jitter.random()))
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last}")

    def generate(self, req: GenerationRequest) -> list[str]:
        if not self.api_key:
            raise ConfigError(f"no API key; set {API_KEY_ENV}")
        out: list[str] = []
        while len(out) < req.n_samples:
            payload = {
                "model": self.model,
                "messages": [{"role": "user", "content": req.prompt}],
                "n": req.n_samples - len(out),
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            }
            body = self._post(payload)
            choices = body.get("choices") or []
            if not choices:
                raise TransportError("response carried no choices")
            out += [(c.get("message") or {}).get("content") or "" for c in choices]
        return out[:req.n_samples]


def make_backend(kind: str, **kwargs) -> Backend:
    if kind == SIMULATOR:
        return Simulator(**kwargs)
    if kind == HTTP_OPENAI:
        return OpenAIChatBackend(**kwargs)
    raise ConfigError(f"unknown backend kind {kind!r}")


def generate(req: GenerationRequest, backend: Backend) -> list[str]:
    out = backend.generate(req)
    if len(out) != req.n_samples:
        raise TransportError(f"expected {req.n_samples} samples, got {len(out)}")
    return out


def generate_many(reqs: Sequence[GenerationRequest], backend: Backend,
                  max_in_flight: int = 1) -> list[list[str]]:
    """Fan requests out over a thread pool; results keep request order."""
    if max_in_flight <= 1 or len(reqs) <= 1:
        return [generate(r, backend) for r in reqs]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(lambda r: generate(r, backend), reqs))


# -- labeling --------------------------------------------------------------

def label_exact(generated: str, gold: str) -> int:
    return int(normalize_answer(generated) == normalize_answer(gold))


def label_rouge(generated: str, gold: str, threshold: float = DEFAULT_ROUGE_THRESHOLD) -> int:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return int(rouge1(generated, gold) >= threshold)


def label_for_task(task, generated: str, gold: str,
                   threshold: float = DEFAULT_ROUGE_THRESHOLD) -> int:
    if task.is_generation:
        return label_rouge(generated, gold, threshold)
    return label_exact(generated, gold)
