"""Command-line entry point (``hydra-lamp``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import _kernels
from .config import SYNTHETIC_PRESET, RunConfig, apply_overrides, load_config, parse_config_text
from .datamodel import get_task, load_dataset, make_synthetic_task, save_dataset, split_users
from .errors import ConfigError, HydraError
from .factorized import derive_seed
from .pipeline import HydraRun, build_backend, run_baseline
from .retriever import build_index, retrieve_top

log = logging.getLogger("hydra_lamp")

DATASET_FILE = "dataset.jsonl"
CONFIG_FILE = "config.txt"

STEPS = {
    "gen-reranker-data": "gen_reranker_data",
    "train-reranker": "train_reranker",
    "fit-reranker": "fit_reranker",
    "rerank": "rerank",
    "gen-adapter-data": "gen_adapter_data",
    "train-adapter": "train_adapter",
    "fit-adapter": "fit_adapter",
    "infer": "infer",
    "evaluate": "evaluate",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workdir", "-w", required=True, type=Path, help="run directory")
    p.add_argument("--config", type=Path, help="flat key=value file; its values override flags")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable), e.g. rerank.k=4")
    p.add_argument("--task")
    p.add_argument("--mode")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["simulator", "http_openai_compatible"])
    p.add_argument("--base-url")
    p.add_argument("--model-name")
    p.add_argument("--preset", choices=["synthetic"], help="start from a tuned preset")
    p.add_argument("--no-personal-reranker", action="store_true", default=None)
    p.add_argument("--no-personal-adapter", action="store_true", default=None)
    p.add_argument("--no-cache", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydra-lamp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a LaMP-style JSONL file into the workdir")
    _common(p)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("synth", help="write a synthetic conflict dataset into the workdir")
    _common(p)
    p.add_argument("--n-users", type=int, default=24)
    p.add_argument("--history", type=int, default=20)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("index", help="show BM25 top-N for one user and query")
    _common(p)
    p.add_argument("--user", required=True)
    p.add_argument("--query")
    p.add_argument("--n", type=int, default=5)

    for name in STEPS:
        _common(sub.add_parser(name, help=f"run the {name} phase"))

    p = sub.add_parser("run", help="end-to-end run (baseline or hydra mode)")
    _common(p)
    p.add_argument("--data", type=Path, help="JSONL input; defaults to the workdir dataset")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    saved = args.workdir / CONFIG_FILE
    pairs: dict[str, str] = {}
    if saved.exists():
        pairs.update(parse_config_text(saved.read_text(encoding="utf-8")))
    if args.preset == "synthetic":
        pairs.update(SYNTHETIC_PRESET)
    flag_map = {
        "task": args.task, "mode": args.mode, "seed": args.seed, "backend": args.backend,
        "base_url": args.base_url, "model_name": args.model_name,
        "no_personal_reranker": args.no_personal_reranker,
        "no_personal_adapter": args.no_personal_adapter,
    }
    pairs.update({k: str(v) for k, v in flag_map.items() if v is not None})
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k] = v
    pairs.setdefault("cache_dir", str(args.workdir / "llm_cache"))
    if args.no_cache:
        pairs["cache_enabled"] = "false"
    cfg = apply_overrides(cfg, pairs)
    if args.config:
        cfg = load_config(args.config, cfg)
    return apply_overrides(cfg, {"out_dir": str(args.workdir)})


def _load_workdir_dataset(args, cfg):
    path = args.workdir / DATASET_FILE
    if not path.exists():
        raise ConfigError(f"{path} not found; run ingest or synth first")
    return load_dataset(path, get_task(cfg.task))


def _split(ds, n_train, n_test, cfg):
    if n_train is None and n_test is None:
        return ds
    total = len(ds.all_users)
    n_train = n_train if n_train is not None else total - (n_test or 0)
    n_test = n_test if n_test is not None else total - n_train
    return split_users(ds, n_train, n_test, derive_seed(cfg.seed, "split"))


def _print_report(report) -> None:
    print(report.to_text(), end="")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except HydraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def _dispatch(args) -> int:
    args.workdir.mkdir(parents=True, exist_ok=True)
    if args.command == "synth" and args.task is None and args.preset is None:
        args.preset = "synthetic"
    cfg = resolve_config(args)
    log.info("kernels: %s", _kernels.BACKEND)
    cmd = args.command

    if cmd == "ingest":
        ds = _split(load_dataset(args.input, get_task(cfg.task)), args.n_train, args.n_test, cfg)
        save_dataset(ds, args.workdir / DATASET_FILE)
        _save_cfg(args, cfg)
        print(f"{len(ds.train_users)} train / {len(ds.test_users)} test users")
        return 0

    if cmd == "synth":
        if cfg.task != "Synthetic":
            raise ConfigError("synth only produces the Synthetic task")
        ds = make_synthetic_task(args.n_users, args.history, cfg.seed)
        ds = _split(ds, args.n_train if args.n_train is not None else args.n_users // 2,
                    args.n_test, cfg)
        save_dataset(ds, args.workdir / DATASET_FILE)
        _save_cfg(args, cfg)
        print(f"{len(ds.train_users)} train / {len(ds.test_users)} test users")
        return 0

    if cmd == "index":
        ds = _load_workdir_dataset(args, cfg)
        user = next((u for u in ds.all_users if u.user_id == args.user), None)
        if user is None:
            raise ConfigError(f"unknown user {args.user!r}")
        index = build_index(user.history)
        for ordinal, score in retrieve_top(index, args.query or user.query, args.n):
            print(json.dumps({"ordinal": ordinal, "item_id": user.history[ordinal].item_id,
                              "score": round(score, 6)}))
        return 0

    if cmd == "run":
        if args.data is not None:
            ds = load_dataset(args.data, get_task(cfg.task))
        else:
            ds = _load_workdir_dataset(args, cfg)
        ds = _split(ds, args.n_train, args.n_test, cfg)
        if cfg.mode.startswith("hydra"):
            report = HydraRun(cfg, ds, build_backend(cfg, ds), args.workdir).run()
        else:
            report = run_baseline(cfg, ds, build_backend(cfg, ds), args.workdir)
        _print_report(report)
        return 0

    ds = _load_workdir_dataset(args, cfg)
    if not cfg.mode.startswith("hydra"):
        raise ConfigError(f"phase commands need a hydra mode, not {cfg.mode!r}")
    runner = HydraRun(cfg, ds, build_backend(cfg, ds), args.workdir)
    out = getattr(runner, STEPS[cmd])()
    if cmd == "evaluate":
        _print_report(out)
    return 0


def _save_cfg(args, cfg) -> None:
    from .config import dump_config

    (args.workdir / CONFIG_FILE).write_text(dump_config(cfg), encoding="utf-8")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
