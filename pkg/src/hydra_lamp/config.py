"""Run configuration and the flat ``key=value`` config file format."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .adapter import AdapterConfig
from .errors import ConfigError
from .factorized import TextEncoderConfig, TrainConfig
from .llm import BACKEND_KINDS, SIMULATOR
from .reranker import RerankConfig

BASELINE_MODES = ("zero_shot", "icl_random", "rag", "pag")
HYDRA_MODES = ("hydra_reranker_only", "hydra_adapter_only", "hydra_full")
MODES = BASELINE_MODES + HYDRA_MODES
ORACLES = ("auto", "default", "synthetic", "echo")


@dataclass
class RunConfig:
    task: str = "Synthetic"
    data_path: Optional[str] = None
    out_dir: Optional[str] = None
    mode: str = "hydra_full"
    seed: int = 0
    n_train: Optional[int] = None
    n_test: Optional[int] = None

    backend: str = SIMULATOR
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-3.5-turbo"
    max_in_flight: int = 4
    requests_per_second: float = 0.0
    simulator_oracle: str = "auto"
    simulator_boost: float = 0.5
    cache_dir: Optional[str] = None
    cache_enabled: bool = True
    cache_greedy_http: bool = True

    label_temperature: float = 1.0
    baseline_temperature: float = 0.0
    rouge_threshold: float = 0.5
    pag_with_retrieval: bool = True

    no_personal_reranker: bool = False
    no_personal_adapter: bool = False
    adapter_context: str = "reranker"

    rerank: RerankConfig = field(default_factory=RerankConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    encoder: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    reranker_train: TrainConfig = field(default_factory=TrainConfig)
    adapter_train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.backend not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.simulator_oracle not in ORACLES:
            raise ConfigError(f"unknown simulator oracle {self.simulator_oracle!r}")
        if self.adapter_context not in ("reranker", "bm25"):
            raise ConfigError("adapter_context must be 'reranker' or 'bm25'")


NESTED = ("rerank", "adapter", "encoder", "reranker_train", "adapter_train")


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.strip().lower() in ("", "none", "null"):
            return None
        tp = args[0]
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    """Return a new config with dotted ``key=value`` overrides applied."""
    top: dict = {}
    nested: dict[str, dict] = {n: {} for n in NESTED}
    top_hints = _hints(RunConfig)
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if "." in key:
            group, name = key.split(".", 1)
            if group not in NESTED:
                raise ConfigError(f"unknown config group {group!r}")
            sub = getattr(cfg, group)
            hints = _hints(type(sub))
            if name not in hints:
                raise ConfigError(f"unknown config key {key!r}")
            nested[group][name] = _coerce(raw, hints[name], key)
        else:
            if key not in top_hints or key in NESTED:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _coerce(raw, top_hints[key], key)
    for group, vals in nested.items():
        if vals:
            try:
                top[group] = dataclasses.replace(getattr(cfg, group), **vals)
            except ValueError as exc:
                raise ConfigError(f"{group}: {exc}") from None
    try:
        return dataclasses.replace(cfg, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return apply_overrides(base or RunConfig(), parse_config_text(text))


def to_pairs(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in NESTED:
            for sf in dataclasses.fields(v):
                out[f"{f.name}.{sf.name}"] = str(getattr(v, sf.name))
        else:
            out[f.name] = str(v)
    return out


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in to_pairs(cfg).items())


SYNTHETIC_PRESET = {
    "task": "Synthetic",
    "encoder.hash_dim": "1024",
    "encoder.hidden_dim": "16",
    "reranker_train.learning_rate": "0.5",
    "reranker_train.epochs": "20",
    "reranker_train.batch_size": "4",
    "adapter_train.learning_rate": "0.5",
    "adapter_train.epochs": "20",
    "adapter_train.batch_size": "4",
}


def synthetic_config(**overrides) -> RunConfig:
    pairs = dict(SYNTHETIC_PRESET)
    pairs.update({k: str(v) for k, v in overrides.items()})
    return apply_overrides(RunConfig(), pairs)
