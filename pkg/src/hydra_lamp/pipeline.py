"""End-to-end orchestration: baselines and the two-stage reranker + adapter run."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import adapter as ad
from . import factorized as fm
from . import reranker as rr
from .audit import read_jsonl, write_jsonl
from .cache import CachedBackend, LlmCache
from .config import BASELINE_MODES, HYDRA_MODES, RunConfig, dump_config
from .datamodel import Dataset, HistoryItem, UserRecord, get_task, load_dataset
from .errors import ConfigError
from .factorized import FactorizedModel, derive_seed
from .llm import HTTP_OPENAI, SIMULATOR, GenerationRequest, OpenAIChatBackend, Simulator, generate
from .metrics import MetricReport, evaluate
from .prompts import build_pag_summary_prompt, build_rag_prompt, prepend_summary
from .retriever import build_index
from .simulation import EchoOracle, SyntheticPreferenceOracle

log = logging.getLogger(__name__)

# (user_id, query, gold, generations) -> adapter scores; replaces the learned head
Scorer = Callable[[str, str, Optional[str], Sequence[str]], Sequence[float]]


def build_backend(cfg: RunConfig, ds: Optional[Dataset] = None):
    if cfg.backend == SIMULATOR:
        task = get_task(cfg.task)
        choice = cfg.simulator_oracle
        if choice == "auto":
            choice = "synthetic" if task.task_id == "Synthetic" else "default"
        if choice == "synthetic":
            oracle = SyntheticPreferenceOracle(cfg.simulator_boost)
        elif choice == "echo":
            if ds is None:
                raise ConfigError("echo simulator needs the dataset")
            oracle = EchoOracle(ds)
        else:
            oracle = None
        backend = Simulator(task.label_set, oracle)
    elif cfg.backend == HTTP_OPENAI:
        backend = OpenAIChatBackend(cfg.base_url, cfg.model_name, max_in_flight=cfg.max_in_flight,
                                    requests_per_second=cfg.requests_per_second)
    else:
        raise ConfigError(f"unknown backend {cfg.backend!r}")
    cache = LlmCache(cfg.cache_dir, enabled=cfg.cache_enabled)
    return CachedBackend(backend, cache, cfg.cache_greedy_http)


def prepare_dataset(cfg: RunConfig, ds: Optional[Dataset] = None) -> Dataset:
    from .datamodel import split_users

    if ds is None:
        if not cfg.data_path:
            raise ConfigError("no dataset: pass data_path")
        ds = load_dataset(cfg.data_path, get_task(cfg.task))
    if cfg.n_train is not None or cfg.n_test is not None:
        n_train = cfg.n_train if cfg.n_train is not None else 0
        n_test = cfg.n_test if cfg.n_test is not None else len(ds.all_users) - n_train
        ds = split_users(ds, n_train, n_test, derive_seed(cfg.seed, "split"))
    return ds


def _model_path(out_dir: Path, name: str) -> Path:
    return out_dir / f"{name}.model"


class HydraRun:
    """Holds the state of one run; each phase persists its outputs when ``out_dir`` is set.

    Phase order: reranker data -> train -> fit test heads -> rerank; then
    adapter data -> train -> fit test heads -> best-of-b inference.
    """

    def __init__(self, cfg: RunConfig, ds: Dataset, backend=None, out_dir=None,
                 adapter_scorer: Optional[Scorer] = None):
        if cfg.mode not in HYDRA_MODES:
            raise ConfigError(f"mode {cfg.mode!r} is not a hydra mode")
        self.cfg = cfg
        self.ds = ds
        self.task = ds.task
        self.backend = backend if backend is not None else build_backend(cfg, ds)
        self.out_dir = Path(out_dir) if out_dir else (Path(cfg.out_dir) if cfg.out_dir else None)
        self.adapter_scorer = adapter_scorer
        self.timings: dict[str, float] = {}
        self.use_reranker = cfg.mode in ("hydra_reranker_only", "hydra_full")
        self.use_adapter = cfg.mode in ("hydra_adapter_only", "hydra_full")
        self.reranker_model: Optional[FactorizedModel] = None
        self.adapter_model: Optional[FactorizedModel] = None
        self.rerank_train: Optional[list] = None
        self.rerank_history: Optional[list] = None
        self.adapter_train: Optional[list] = None
        self.adapter_history: Optional[list] = None
        self.predictions: Optional[list[dict]] = None
        self._indexes: dict[str, object] = {}
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "config.txt").write_text(dump_config(cfg), encoding="utf-8")

    # -- helpers -------------------------------------------------------------

    def _seed(self, *label) -> int:
        return derive_seed(self.cfg.seed, *label)

    def _dump(self, name: str, records) -> None:
        if self.out_dir is not None:
            write_jsonl(self.out_dir / name, records)

    def _load(self, name: str) -> list[dict]:
        if self.out_dir is None or not (self.out_dir / name).exists():
            raise ConfigError(f"missing artifact {name}; run the earlier phase first")
        return read_jsonl(self.out_dir / name)

    def _timed(self, name: str, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[name] = round(time.perf_counter() - t0, 4)
        return out

    def _index(self, user: UserRecord):
        idx = self._indexes.get(user.user_id)
        if idx is None:
            idx = self._indexes[user.user_id] = build_index(user.history)
        return idx

    def _save_model(self, model: FactorizedModel, name: str) -> None:
        if self.out_dir is not None:
            fm.save_model(model, _model_path(self.out_dir, name))

    def _load_model(self, name: str) -> FactorizedModel:
        if self.out_dir is None:
            raise ConfigError(f"no {name} model in memory and no out_dir to load from")
        return fm.load_model(_model_path(self.out_dir, name), self.cfg.encoder)

    # -- reranker ------------------------------------------------------------

    def gen_reranker_data(self):
        cfg = self.cfg
        rcfg = rr.RerankConfig(cfg.rerank.M, cfg.rerank.N, cfg.rerank.k, self._seed("reranker-cands"))
        label_seed = self._seed("reranker-label")

        def build(users, include_main):
            cands = [c for u in users for c in rr.gen_reranker_candidates(u, rcfg, include_main)]
            exs = rr.label_reranker_candidates(cands, self.backend, self.task, cfg.label_temperature,
                                               label_seed, cfg.rouge_threshold, cfg.adapter.max_tokens)
            return cands, exs

        def run():
            c_train, self.rerank_train = build(self.ds.train_users, True)
            c_hist, self.rerank_history = build(self.ds.test_users, False)
            self._dump("reranker_candidates_train.jsonl", c_train)
            self._dump("reranker_candidates_history.jsonl", c_hist)
            self._dump("reranker_examples_train.jsonl", self.rerank_train)
            self._dump("reranker_examples_history.jsonl", self.rerank_history)

        self._timed("gen_reranker_data", run)

    def _reranker_examples(self, which: str):
        cached = getattr(self, f"rerank_{which}")
        if cached is None:
            cached = [rr.RerankerExample(**r) for r in self._load(f"reranker_examples_{which}.jsonl")]
            setattr(self, f"rerank_{which}", cached)
        return cached

    def train_reranker(self):
        def run():
            model = FactorizedModel(self.cfg.encoder, self._seed("reranker-model"),
                                    shared=self.cfg.no_personal_reranker)
            tcfg = _with_seed(self.cfg.reranker_train, self._seed("reranker-train"))
            losses = rr.train_reranker(self._reranker_examples("train"), model, tcfg)
            self.reranker_model = model
            self._save_model(model, "reranker_trained")
            return losses

        self.reranker_train_losses = self._timed("train_reranker", run)

    def _fit_heads(self, model: FactorizedModel, examples, tcfg) -> None:
        """Fresh head per test user on its own history with the base frozen.

        With a shared head the single head is re-created and fitted on the
        pooled test histories instead.
        """
        test_ids = [u.user_id for u in self.ds.test_users]
        if model.shared:
            model.drop_heads()
            pooled = [(e.x, e.y) for e in examples]
            fm.fit_new_head(model, fm.SHARED_HEAD, pooled, tcfg)
            return
        for uid in test_ids:
            model.heads.pop(uid, None)
            mine = [(e.x, e.y) for e in examples if e.user_id == uid]
            fm.fit_new_head(model, uid, mine, tcfg)

    def fit_reranker(self):
        def run():
            model = self.reranker_model or self._load_model("reranker_trained")
            tcfg = _with_seed(self.cfg.reranker_train, self._seed("reranker-fit"))
            self._fit_heads(model, self._reranker_examples("history"), tcfg)
            self.reranker_model = model
            self._save_model(model, "reranker")

        self._timed("fit_reranker", run)

    def context(self, user: UserRecord, query: str, exclude=()) -> list[HistoryItem]:
        """The k behaviors put in front of the LLM for ``query``."""
        k = self.cfg.rerank.k
        if self.use_reranker and self.cfg.adapter_context == "reranker":
            model = self.reranker_model or self._load_model("reranker")
            self.reranker_model = model
            return rr.rerank_topk(model, user.user_id, query, user.history, self.cfg.rerank,
                                  exclude, self._index(user))
        return rr.bm25_topk(query, user.history, k, exclude, self._index(user))

    def rerank(self) -> list[dict]:
        def run():
            recs = []
            for u in self.ds.test_users:
                chosen = self.context(u, u.query)
                recs.append({"user_id": u.user_id, "query": u.query,
                             "selected": [h.item_id for h in chosen]})
            self._dump("reranker_selection.jsonl", recs)
            return recs

        return self._timed("rerank", run)

    # -- adapter -------------------------------------------------------------

    def _sample(self, user: UserRecord, q: ad.AdapterQuery, tag: str) -> list[str]:
        exclude = () if q.item_ordinal is None else (q.item_ordinal,)
        ctx = self.context(user, q.query, exclude)
        seed = self._seed("adapter-sample", tag, user.user_id,
                          -1 if q.item_ordinal is None else q.item_ordinal)
        acfg = self.cfg.adapter
        return ad.sample_generations(q.query, ctx, acfg, self.backend, self.task, seed=seed)

    def gen_adapter_data(self):
        thr = self.cfg.rouge_threshold

        def build(users, history_only: bool, tag: str):
            gens, exs = [], []
            for u in users:
                pairs = ad.gen_adapter_candidates(u)
                if history_only:
                    pairs = pairs[1:]
                for q in pairs:
                    if q.gold is None:
                        continue
                    g = self._sample(u, q, tag)
                    gens.append({"user_id": u.user_id, "query": q.query, "gold": q.gold,
                                 "item_ordinal": q.item_ordinal, "generations": g})
                    exs += ad.label_adapter_examples(u.user_id, q.query, q.gold, g, self.task, thr)
            return gens, exs

        def run():
            g_train, self.adapter_train = build(self.ds.train_users, False, "train")
            g_hist, self.adapter_history = build(self.ds.test_users, True, "history")
            self._dump("adapter_generations_train.jsonl", g_train)
            self._dump("adapter_generations_history.jsonl", g_hist)
            self._dump("adapter_examples_train.jsonl", self.adapter_train)
            self._dump("adapter_examples_history.jsonl", self.adapter_history)

        self._timed("gen_adapter_data", run)

    def _adapter_examples(self, which: str):
        cached = getattr(self, f"adapter_{which}")
        if cached is None:
            cached = [ad.AdapterExample(**r) for r in self._load(f"adapter_examples_{which}.jsonl")]
            setattr(self, f"adapter_{which}", cached)
        return cached

    def train_adapter(self):
        def run():
            model = FactorizedModel(self.cfg.encoder, self._seed("adapter-model"),
                                    shared=self.cfg.no_personal_adapter)
            tcfg = _with_seed(self.cfg.adapter_train, self._seed("adapter-train"))
            losses = ad.train_adapter(self._adapter_examples("train"), model, tcfg)
            self.adapter_model = model
            self._save_model(model, "adapter_trained")
            return losses

        self.adapter_train_losses = self._timed("train_adapter", run)

    def fit_adapter(self):
        def run():
            model = self.adapter_model or self._load_model("adapter_trained")
            tcfg = _with_seed(self.cfg.adapter_train, self._seed("adapter-fit"))
            self._fit_heads(model, self._adapter_examples("history"), tcfg)
            self.adapter_model = model
            self._save_model(model, "adapter")

        self._timed("fit_adapter", run)

    # -- inference -----------------------------------------------------------

    def infer(self) -> list[dict]:
        def run():
            recs = []
            for u in self.ds.test_users:
                q = ad.AdapterQuery(u.query, u.gold, None)
                if self.use_adapter:
                    gens = self._sample(u, q, "test")
                    if self.adapter_scorer is not None:
                        scores = [float(s) for s in self.adapter_scorer(u.user_id, u.query, u.gold, gens)]
                    else:
                        model = self.adapter_model or self._load_model("adapter")
                        self.adapter_model = model
                        scores = ad.score_generations(model, u.user_id, u.query, gens).tolist()
                    chosen = ad.argmax_first(scores)
                else:
                    ctx = self.context(u, u.query)
                    prompt = build_rag_prompt(self.task, ctx, u.query).aip
                    req = GenerationRequest(prompt, 1, self.cfg.baseline_temperature,
                                            self.cfg.adapter.max_tokens, self._seed("answer"))
                    gens, scores, chosen = generate(req, self.backend), None, 0
                recs.append({"user_id": u.user_id, "query": u.query, "gold": u.gold,
                             "generations": gens, "scores": scores, "chosen": chosen,
                             "prediction": gens[chosen]})
            self.predictions = recs
            self._dump("predictions.jsonl", recs)
            return recs

        return self._timed("infer", run)

    def evaluate(self) -> MetricReport:
        preds = self.predictions if self.predictions is not None else self._load("predictions.jsonl")
        report = report_from_predictions(self.task, preds)
        write_report(self.out_dir, report)
        return report

    def run(self) -> MetricReport:
        if self.use_reranker:
            self.gen_reranker_data()
            self.train_reranker()
            self.fit_reranker()
            self.rerank()
        if self.use_adapter:
            self.gen_adapter_data()
            self.train_adapter()
            self.fit_adapter()
        self.infer()
        report = self.evaluate()
        if self.out_dir is not None:
            (self.out_dir / "timing.json").write_text(json.dumps(self.timings, indent=2), encoding="utf-8")
        return report


def _with_seed(tcfg: fm.TrainConfig, seed: int) -> fm.TrainConfig:
    return fm.TrainConfig(tcfg.learning_rate, tcfg.epochs, tcfg.batch_size, tcfg.clip, seed)


def report_from_predictions(task, preds: Sequence[dict]) -> MetricReport:
    scored = [p for p in preds if p.get("gold") is not None]
    if not scored:
        return MetricReport({}, 0)
    return evaluate(task.metric_set, [p["prediction"] for p in scored],
                    [p["gold"] for p in scored], task.label_set or None)


def write_report(out_dir: Optional[Path], report: MetricReport) -> None:
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")


# -- baselines ---------------------------------------------------------------

def baseline_prompt(cfg: RunConfig, task, user: UserRecord, backend) -> str:
    k = cfg.rerank.k
    mode = cfg.mode
    if mode == "zero_shot":
        return user.query
    if mode == "icl_random":
        rng = np.random.default_rng(derive_seed(cfg.seed, "icl-random", user.user_id))
        n = min(k, len(user.history))
        picks = sorted(rng.choice(len(user.history), size=n, replace=False).tolist()) if n else []
        return build_rag_prompt(task, [user.history[i] for i in picks], user.query).aip
    if mode == "rag":
        return build_rag_prompt(task, rr.bm25_topk(user.query, user.history, k), user.query).aip
    if mode == "pag":
        summary_req = GenerationRequest(build_pag_summary_prompt(task, user.history), 1,
                                        cfg.baseline_temperature, cfg.adapter.max_tokens,
                                        derive_seed(cfg.seed, "pag-summary"))
        summary = generate(summary_req, backend)[0]
        items = rr.bm25_topk(user.query, user.history, k) if cfg.pag_with_retrieval else []
        return prepend_summary(summary, build_rag_prompt(task, items, user.query).aip)
    raise ConfigError(f"{mode!r} is not a baseline mode")


def run_baseline(cfg: RunConfig, ds: Dataset, backend=None, out_dir=None) -> MetricReport:
    if cfg.mode not in BASELINE_MODES:
        raise ConfigError(f"mode {cfg.mode!r} is not a baseline mode")
    backend = backend if backend is not None else build_backend(cfg, ds)
    out = Path(out_dir) if out_dir else (Path(cfg.out_dir) if cfg.out_dir else None)
    recs = []
    for u in ds.test_users:
        prompt = baseline_prompt(cfg, ds.task, u, backend)
        req = GenerationRequest(prompt, 1, cfg.baseline_temperature, cfg.adapter.max_tokens,
                                derive_seed(cfg.seed, "answer"))
        pred = generate(req, backend)[0]
        recs.append({"user_id": u.user_id, "query": u.query, "gold": u.gold,
                     "prompt": prompt, "prediction": pred})
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
        write_jsonl(out / "predictions.jsonl", recs)
    report = report_from_predictions(ds.task, recs)
    write_report(out, report)
    return report


def run_hydra(cfg: RunConfig, ds: Dataset, backend=None, out_dir=None,
              adapter_scorer: Optional[Scorer] = None) -> MetricReport:
    return HydraRun(cfg, ds, backend, out_dir, adapter_scorer).run()


def run(cfg: RunConfig, ds: Dataset, backend=None, out_dir=None) -> MetricReport:
    if cfg.mode in BASELINE_MODES:
        return run_baseline(cfg, ds, backend, out_dir)
    return run_hydra(cfg, ds, backend, out_dir)
