import itertools
import json

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from hydra_lamp.cache import CachedBackend, LlmCache, cache_key
from hydra_lamp.datamodel import TASKS, HistoryItem
from hydra_lamp.errors import ConfigError, TransportError
from hydra_lamp.llm import (
    API_KEY_ENV, GenerationRequest, OpenAIChatBackend, Simulator, TokenBucket,
    generate_many, label_exact, label_for_task, label_rouge, make_backend,
)
from hydra_lamp.prompts import build_pag_summary_prompt, build_rag_prompt, prepend_summary


# -- prompts ---------------------------------------------------------------

def test_lamp4_prompt_byte_exact():
    items = [HistoryItem("1", "X1", "T1"), HistoryItem("2", "X2", "T2")]
    bundle = build_rag_prompt(TASKS["LaMP-4"], items, "Q")
    assert bundle.aip == '"T1" is the title for "X1", and "T2" is the title for "X2". Q'
    assert all(p in bundle.aip for p in bundle.ppep_strings)


def test_empty_items_is_zero_shot():
    assert build_rag_prompt(TASKS["LaMP-2N"], [], "input text").aip == "input text"


def test_lamp5_pattern_preamble():
    aip = build_rag_prompt(TASKS["LaMP-5"], [HistoryItem("1", "abs", "ttl")], "Q").aip
    assert "Following the given patterns" in aip
    assert aip.index("Following the given patterns") < aip.index("Q")


def test_pag_prompts():
    hist = [HistoryItem("1", "text", "4")]
    assert "describe a template for their headlines" in build_pag_summary_prompt(TASKS["LaMP-4"], hist)
    assert "most common positive score" in build_pag_summary_prompt(TASKS["LaMP-3"], hist)
    with pytest.raises(ConfigError):
        build_pag_summary_prompt("LaMP-9", hist)
    with pytest.raises(ValueError):
        build_pag_summary_prompt(TASKS["LaMP-4"], [])


def test_unknown_task_template_error():
    with pytest.raises(ConfigError):
        build_rag_prompt("nope", [], "x")


def test_prepend_summary():
    assert prepend_summary("likes sports", "Q") == "likes sports. Q"
    assert prepend_summary("  ", "Q") == "Q"


def test_item_permutation_preserves_ppep_multiset():
    items = [HistoryItem(str(i), f"q{i}", f"a{i}") for i in range(4)]
    base = build_rag_prompt(TASKS["LaMP-2N"], items, "x")
    for perm in itertools.permutations(items):
        got = build_rag_prompt(TASKS["LaMP-2N"], perm, "x")
        assert sorted(got.ppep_strings) == sorted(base.ppep_strings)


# -- simulator ---------------------------------------------------------------

def test_simulator_deterministic():
    sim = Simulator(("a", "b", "c"))
    req = GenerationRequest("classify: a b", n_samples=3, seed=11)
    assert sim.generate(req) == sim.generate(req)
    assert len(sim.generate(req)) == 3
    assert Simulator(("a", "b", "c")).generate(req) == sim.generate(req)


def test_simulator_temperature_zero_is_mode():
    sim = Simulator(("a", "b"))
    prompt = "b b b a"
    weights = dict(sim.response_weights(prompt))
    mode = max(weights, key=weights.get)
    assert sim.generate(GenerationRequest(prompt, 1, temperature=0.0)) == [mode] == ["b"]


def test_simulator_generation_default_and_truncation():
    sim = Simulator()
    out = sim.generate(GenerationRequest("one two three four five six seven", n_samples=4, max_tokens=2))
    assert all(len(o.split()) <= 2 for o in out)


def test_request_validation():
    with pytest.raises(ValueError):
        GenerationRequest("x", n_samples=0)
    with pytest.raises(ValueError):
        GenerationRequest("x", temperature=-1)


def test_generate_many_preserves_order():
    sim = Simulator(("a", "b"))
    reqs = [GenerationRequest(f"p{i} a", 2, seed=i) for i in range(12)]
    assert generate_many(reqs, sim, max_in_flight=4) == [sim.generate(r) for r in reqs]


def test_make_backend():
    assert isinstance(make_backend("simulator", label_set=("a",)), Simulator)
    with pytest.raises(ConfigError):
        make_backend("gpt-local")


# -- http backend --------------------------------------------------------------

def _ok(n):
    return httpx.Response(200, json={"choices": [{"message": {"content": f"r{i}"}} for i in range(n)]})


def _backend(handler, **kw):
    return OpenAIChatBackend("http://llm.test/v1", "m", api_key="k",
                             transport=httpx.MockTransport(handler), sleep=lambda s: None, **kw)


def test_http_no_key_fails_before_network(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    calls = []

    def handler(request):
        calls.append(request)
        return _ok(1)

    be = OpenAIChatBackend("http://llm.test/v1", "m", transport=httpx.MockTransport(handler))
    with pytest.raises(ConfigError):
        be.generate(GenerationRequest("x"))
    assert calls == []


def test_http_key_from_env(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    seen = []

    def handler(request):
        seen.append(request.headers["authorization"])
        return _ok(1)

    be = OpenAIChatBackend("http://llm.test/v1", "m", transport=httpx.MockTransport(handler))
    assert be.generate(GenerationRequest("x")) == ["r0"]
    assert seen == ["Bearer secret"]


def test_http_payload_shape():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        assert request.url.path == "/v1/chat/completions"
        return _ok(bodies[-1]["n"])

    out = _backend(handler).generate(GenerationRequest("hello", n_samples=3, temperature=1.0, max_tokens=7))
    assert out == ["r0", "r1", "r2"]
    assert bodies == [{"model": "m", "messages": [{"role": "user", "content": "hello"}],
                       "n": 3, "temperature": 1.0, "max_tokens": 7}]


def test_http_tops_up_short_responses():
    def handler(request):
        return _ok(1)

    assert _backend(handler).generate(GenerationRequest("x", n_samples=3)) == ["r0"] * 3


def test_http_retries_then_succeeds():
    statuses = iter([503, 429, 200])
    delays = []

    def handler(request):
        code = next(statuses)
        return _ok(1) if code == 200 else httpx.Response(code)

    be = OpenAIChatBackend("http://llm.test/v1", "m", api_key="k", backoff=1.0,
                           transport=httpx.MockTransport(handler), sleep=delays.append)
    assert be.generate(GenerationRequest("x")) == ["r0"]
    assert be.calls == 3
    assert len(delays) == 2
    assert 1.0 <= delays[0] <= 1.25 and 2.0 <= delays[1] <= 2.5


def test_http_exhausted_retries():
    def handler(request):
        raise httpx.ConnectError("down")

    be = _backend(handler)
    with pytest.raises(TransportError, match="5 attempts"):
        be.generate(GenerationRequest("x"))
    assert be.calls == 5


def test_http_4xx_is_fatal():
    def handler(request):
        return httpx.Response(401, text="bad key")

    be = _backend(handler)
    with pytest.raises(ConfigError):
        be.generate(GenerationRequest("x"))
    assert be.calls == 1


def test_token_bucket_waits():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    bucket = TokenBucket(2.0, capacity=1.0, clock=lambda: now[0], sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert slept == [pytest.approx(0.5)]


# -- labeling ----------------------------------------------------------------

def test_label_exact_examples():
    assert label_exact(" Sports ", "sports") == 1
    assert label_exact("politics", "crime") == 0
    assert label_exact("", "") == 1
    assert label_exact("a  b", "A b") == 1


def test_label_rouge_examples():
    assert label_rouge("the cat sat", "the cat sat", 0.5) == 1
    assert label_rouge("alpha beta", "gamma delta", 0.1) == 0
    assert label_rouge("the cat sat", "the cat", 0.8) == 1
    with pytest.raises(ValueError):
        label_rouge("a", "a", 1.5)


def test_label_for_task_dispatch():
    assert label_for_task(TASKS["LaMP-4"], "the cat sat", "the cat") == 1
    assert label_for_task(TASKS["LaMP-2N"], "the cat sat", "the cat") == 0


text = st.lists(st.sampled_from(["a", "b", "c", "A", " "]), max_size=8).map("".join)


@settings(max_examples=200, deadline=None)
@given(text, text)
def test_label_exact_symmetric(a, b):
    assert label_exact(a, b) == label_exact(b, a)


@settings(max_examples=200, deadline=None)
@given(text, text, st.floats(0, 1), st.floats(0, 1))
def test_label_rouge_monotone(a, b, t1, t2):
    lo, hi = sorted((t1, t2))
    assert label_rouge(a, b, hi) <= label_rouge(a, b, lo)


# -- cache -------------------------------------------------------------------

def test_cache_roundtrip_on_disk(tmp_path):
    c = LlmCache(tmp_path)
    c.put("ab" * 32, "hello")
    fresh = LlmCache(tmp_path)
    assert fresh.get("ab" * 32) == "hello"
    assert fresh.get("cd" * 32) is None
    assert (fresh.hits, fresh.misses) == (1, 1)


def test_cache_key_depends_on_fields():
    req = GenerationRequest("p", seed=1)
    keys = {cache_key("sim", req, 0), cache_key("sim", req, 1), cache_key("other", req, 0),
            cache_key("sim", GenerationRequest("p", seed=2), 0),
            cache_key("sim", GenerationRequest("p", seed=1, temperature=0.5), 0)}
    assert len(keys) == 5


def test_cached_backend_warm_run_makes_no_calls(tmp_path):
    sim = Simulator(("a", "b"))
    reqs = [GenerationRequest(f"p{i}", n_samples=3, seed=i) for i in range(5)]
    cold = [CachedBackend(sim, LlmCache(tmp_path)).generate(r) for r in reqs]
    calls = sim.calls
    warm_backend = CachedBackend(sim, LlmCache(tmp_path))
    warm = [warm_backend.generate(r) for r in reqs]
    assert warm == cold
    assert sim.calls == calls
    assert warm_backend.cache.hits == 15


def test_disabled_cache_always_calls(tmp_path):
    sim = Simulator(("a",))
    be = CachedBackend(sim, LlmCache(tmp_path, enabled=False))
    be.generate(GenerationRequest("p"))
    be.generate(GenerationRequest("p"))
    assert sim.calls == 2
    assert not any(tmp_path.iterdir())


def test_corrupt_entry_is_a_miss(tmp_path, caplog):
    sim = Simulator(("a", "b"))
    req = GenerationRequest("p")
    CachedBackend(sim, LlmCache(tmp_path)).generate(req)
    key = cache_key(sim.identity(), req, 0)
    (tmp_path / key[:2] / f"{key}.json").write_text("{broken")
    cache = LlmCache(tmp_path)
    assert cache.get(key) is None
    assert "corrupt" in caplog.text
    assert CachedBackend(sim, cache).generate(req) == sim.generate(req)


def test_greedy_http_bypass_flag():
    def handler(request):
        return _ok(1)

    http = _backend(handler)
    be = CachedBackend(http, LlmCache(), cache_greedy_http=False)
    be.generate(GenerationRequest("x", temperature=0.0))
    be.generate(GenerationRequest("x", temperature=0.0))
    assert http.calls == 2
    be.generate(GenerationRequest("x", temperature=1.0))
    be.generate(GenerationRequest("x", temperature=1.0))
    assert http.calls == 3
