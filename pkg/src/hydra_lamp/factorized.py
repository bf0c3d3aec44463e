"""Shared-base / per-user-head scorer with hand-derived gradients.

The base ``sigma = (E, B1, c1)`` maps hashed n-gram features ``x`` to a
hidden state ``s = tanh(B1 (E^T x) + c1)``. Each user owns a head
``tau = (W1, W2, b1, b2)`` producing ``p = softmax(W2 tanh(W1 s + b1) + b2)``
with two outputs; ``p[1]`` is the usefulness / preference score.

Training on a user's sample updates the base and that user's head only;
fitting a new user's head leaves the base untouched.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConflictError, CorruptModelError, ModelFormatError, RoutingError
from .text import Tokenizer

EPS = 1e-12
OUT_DIM = 2
SHARED_HEAD = "__shared__"

_feature_tok = Tokenizer(lowercase=True, keep_sentinels=True)


class DimensionError(ModelFormatError):
    pass


@dataclass(frozen=True)
class TextEncoderConfig:
    hash_dim: int = 4096
    hidden_dim: int = 64
    ngram_max: int = 2

    def __post_init__(self):
        if not self.hash_dim >= self.hidden_dim >= 1:
            raise ValueError("need hash_dim >= hidden_dim >= 1")
        if self.ngram_max < 1:
            raise ValueError("ngram_max must be >= 1")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 2
    batch_size: int = 64
    clip: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class BaseParams:
    E: np.ndarray
    B1: np.ndarray
    c1: np.ndarray

    def arrays(self):
        return (self.E, self.B1, self.c1)

    def copy(self) -> "BaseParams":
        return BaseParams(*(a.copy() for a in self.arrays()))


@dataclass
class HeadParams:
    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return (self.W1, self.W2, self.b1, self.b2)

    def copy(self) -> "HeadParams":
        return HeadParams(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros(cls, d: int, o: int = OUT_DIM) -> "HeadParams":
        return cls(np.zeros((d, d)), np.zeros((o, d)), np.zeros(d), np.zeros(o))


@dataclass
class Gradients:
    loss: float
    base: Optional[BaseParams]
    head: HeadParams


def derive_seed(*parts) -> int:
    h = hashlib.blake2b(":".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big") >> 1


def _hash_bucket(gram: str, hash_dim: int) -> int:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big") % hash_dim


@lru_cache(maxsize=200_000)
def featurize(text: str, hash_dim: int, ngram_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Hashed 1..ngram_max gram counts, L2-normalised, as sorted (indices, values)."""
    tokens = _feature_tok(text)
    counts: dict[int, float] = {}
    for n in range(1, ngram_max + 1):
        for i in range(len(tokens) - n + 1):
            b = _hash_bucket(" ".join(tokens[i:i + n]), hash_dim)
            counts[b] = counts.get(b, 0.0) + 1.0
    idx = np.array(sorted(counts), dtype=np.int64)
    val = np.array([counts[i] for i in idx], dtype=np.float64)
    if val.size:
        val /= np.sqrt(np.sum(val * val))
    idx.setflags(write=False)
    val.setflags(write=False)
    return idx, val


class FactorizedModel:
    def __init__(self, config: TextEncoderConfig = TextEncoderConfig(), seed: int = 0,
                 shared: bool = False, base: Optional[BaseParams] = None):
        self.config = config
        self.seed = seed
        self.shared = shared
        self.base = base if base is not None else self._init_base()
        self.heads: dict[str, HeadParams] = {}
        self._gE = np.zeros_like(self.base.E)

    def _init_base(self) -> BaseParams:
        d, hd = self.config.hidden_dim, self.config.hash_dim
        rng = np.random.default_rng(derive_seed(self.seed, "base"))
        bound = 1.0 / math.sqrt(d)
        return BaseParams(
            E=rng.standard_normal((hd, d)),
            B1=rng.uniform(-bound, bound, (d, d)),
            c1=np.zeros(d),
        )

    # -- routing -------------------------------------------------------

    def route(self, user_id: str) -> str:
        return SHARED_HEAD if self.shared else user_id

    def head(self, user_id: str) -> HeadParams:
        key = self.route(user_id)
        try:
            return self.heads[key]
        except KeyError:
            raise RoutingError(f"no head for user {user_id!r}") from None

    def init_head(self, user_id: str) -> HeadParams:
        d = self.config.hidden_dim
        rng = np.random.default_rng(derive_seed(self.seed, "head", user_id))
        bound = 1.0 / math.sqrt(d)
        return HeadParams(
            W1=rng.uniform(-bound, bound, (d, d)),
            W2=rng.uniform(-bound, bound, (OUT_DIM, d)),
            b1=np.zeros(d),
            b2=np.zeros(OUT_DIM),
        )

    def add_head(self, user_id: str) -> HeadParams:
        key = self.route(user_id)
        if key in self.heads:
            raise ConflictError(f"head for {key!r} already exists")
        self.heads[key] = self.init_head(key)
        return self.heads[key]

    def ensure_head(self, user_id: str) -> HeadParams:
        key = self.route(user_id)
        if key not in self.heads:
            self.heads[key] = self.init_head(key)
        return self.heads[key]

    def drop_heads(self) -> None:
        self.heads.clear()

    def features(self, text: str):
        return featurize(text, self.config.hash_dim, self.config.ngram_max)


# -- forward pieces ---------------------------------------------------------

def encode(model: FactorizedModel, text: str) -> np.ndarray:
    idx, val = model.features(text)
    E, B1, c1 = model.base.arrays()
    a = val @ E[idx] if idx.size else np.zeros(model.config.hidden_dim)
    return np.tanh(B1 @ a + c1)


def head_forward(head: HeadParams, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] != head.W1.shape[1]:
        raise ValueError(f"hidden state of shape {s.shape} does not fit head of width {head.W1.shape[1]}")
    z = head.W2 @ np.tanh(head.W1 @ s + head.b1) + head.b2
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def ce_loss(p: np.ndarray, y: int) -> float:
    p1 = min(max(float(p[1]), EPS), 1.0 - EPS)
    return -y * math.log(p1) - (1 - y) * math.log(1.0 - p1)


def predict(model: FactorizedModel, user_id: str, x: str) -> np.ndarray:
    head = model.head(user_id)
    idx, val = model.features(x)
    return np.asarray(_kernels.forward(*model.base.arrays(), *head.arrays(), idx, val))


def predict_many(model: FactorizedModel, user_id: str, xs: Sequence[str]) -> np.ndarray:
    return np.array([predict(model, user_id, x)[1] for x in xs], dtype=np.float64)


# -- gradients and updates --------------------------------------------------

def gradients(model: FactorizedModel, user_id: str, x: str, y: int,
              with_base: bool = True) -> Gradients:
    head = model.head(user_id)
    idx, val = model.features(x)
    gb = BaseParams(*(np.zeros_like(a) for a in model.base.arrays()))
    gh = HeadParams(*(np.zeros_like(a) for a in head.arrays()))
    loss = _kernels.accumulate(*model.base.arrays(), *head.arrays(), idx, val,
                               float(y), 1.0, EPS, with_base, *gb.arrays(), *gh.arrays())
    return Gradients(float(loss), gb if with_base else None, gh)


def _global_norm(arrays: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in arrays))


def train_batch(model: FactorizedModel, batch: Sequence[tuple[str, str, int]],
                cfg: TrainConfig, update_base: bool = True) -> list[float]:
    """One averaged SGD step over ``batch`` of ``(user_id, x, y)``.

    The base accumulates every sample's gradient; each head only its own
    samples'. Both are scaled by ``1/len(batch)``. Returns pre-step losses.
    """
    if not batch:
        return []
    scale = 1.0 / len(batch)
    base = model.base
    gE = model._gE
    gB1, gc1 = np.zeros_like(base.B1), np.zeros_like(base.c1)
    head_grads: dict[str, HeadParams] = {}
    touched: list[np.ndarray] = []
    losses = []
    for user_id, x, y in batch:
        head = model.head(user_id)
        key = model.route(user_id)
        gh = head_grads.get(key)
        if gh is None:
            gh = head_grads[key] = HeadParams(*(np.zeros_like(a) for a in head.arrays()))
        idx, val = model.features(x)
        touched.append(idx)
        losses.append(float(_kernels.accumulate(
            base.E, base.B1, base.c1, *head.arrays(), idx, val, float(y), scale, EPS,
            update_base, gE, gB1, gc1, *gh.arrays())))
    rows = np.unique(np.concatenate(touched)) if touched else np.zeros(0, dtype=np.int64)
    lr = cfg.learning_rate
    if cfg.clip is not None:
        parts = [a for g in head_grads.values() for a in g.arrays()]
        if update_base:
            parts += [gE[rows], gB1, gc1]
        norm = _global_norm(parts)
        if norm > cfg.clip:
            lr = lr * cfg.clip / norm
    if lr != 0.0:
        for key, gh in head_grads.items():
            for param, grad in zip(model.heads[key].arrays(), gh.arrays()):
                param -= lr * grad
        if update_base:
            base.E[rows] -= lr * gE[rows]
            base.B1 -= lr * gB1
            base.c1 -= lr * gc1
    gE[rows] = 0.0
    return losses


def train_step(model: FactorizedModel, user_id: str, x: str, y: int, cfg: TrainConfig) -> float:
    """Single-sample SGD on the base and ``user_id``'s head; returns the pre-step loss."""
    return train_batch(model, [(user_id, x, y)], cfg, update_base=True)[0]


def _batches(items: Sequence, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def train(model: FactorizedModel, samples: Sequence[tuple[str, str, int]], cfg: TrainConfig,
          update_base: bool = True, shuffle: bool = True) -> list[float]:
    """Run ``cfg.epochs`` passes; returns the mean pre-step loss of each epoch."""
    if not samples:
        return []
    for user_id, _, _ in samples:
        model.ensure_head(user_id)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
        ordered = [samples[i] for i in order]
        losses = []
        for batch in _batches(ordered, cfg.batch_size):
            losses += train_batch(model, batch, cfg, update_base=update_base)
        history.append(float(np.mean(losses)))
    return history


def fit_new_head(model: FactorizedModel, user_id: str, examples: Sequence[tuple[str, int]],
                 cfg: TrainConfig) -> HeadParams:
    """Create a head for a new user and fit it with the base frozen.

    Examples are visited in the given order each epoch.
    """
    model.add_head(user_id)
    samples = [(user_id, x, y) for x, y in examples]
    model.last_fit_losses = train(model, samples, cfg, update_base=False, shuffle=False)
    return model.head(user_id)


# -- persistence ------------------------------------------------------------

MAGIC = b"HYDRAFM\x00"
FORMAT_VERSION = 1
_DIGEST = 32


def _write_array(buf: io.BytesIO, a: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def dumps_model(model: FactorizedModel) -> bytes:
    cfg = model.config
    header = {
        "hash_dim": cfg.hash_dim,
        "hidden_dim": cfg.hidden_dim,
        "ngram_max": cfg.ngram_max,
        "out_dim": OUT_DIM,
        "seed": model.seed,
        "shared": model.shared,
        "heads": list(model.heads),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for a in model.base.arrays():
        _write_array(buf, a)
    for key in model.heads:
        for a in model.heads[key].arrays():
            _write_array(buf, a)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def loads_model(data: bytes, expect: Optional[TextEncoderConfig] = None) -> FactorizedModel:
    if len(data) < len(MAGIC) + 8 + _DIGEST or not data.startswith(MAGIC):
        raise CorruptModelError("not a model file or truncated header")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptModelError("checksum mismatch (truncated or corrupt file)")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    off = len(MAGIC) + 8
    header = json.loads(body[off:off + hlen].decode("utf-8"))
    off += hlen
    cfg = TextEncoderConfig(header["hash_dim"], header["hidden_dim"], header["ngram_max"])
    if expect is not None and expect != cfg:
        raise DimensionError(f"model dims {cfg} do not match expected {expect}")
    if header["out_dim"] != OUT_DIM:
        raise DimensionError(f"unsupported output width {header['out_dim']}")
    d, hd = cfg.hidden_dim, cfg.hash_dim

    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) * 8
        if off + n > len(body):
            raise CorruptModelError("array data truncated")
        arr = np.frombuffer(body, dtype="<f8", count=n // 8, offset=off).reshape(shape).copy()
        off += n
        return arr

    base = BaseParams(take((hd, d)), take((d, d)), take((d,)))
    model = FactorizedModel(cfg, seed=header["seed"], shared=header["shared"], base=base)
    for key in header["heads"]:
        model.heads[key] = HeadParams(take((d, d)), take((OUT_DIM, d)), take((d,)), take((OUT_DIM,)))
    if off != len(body):
        raise CorruptModelError("trailing bytes after model data")
    return model


def save_model(model: FactorizedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path, expect: Optional[TextEncoderConfig] = None) -> FactorizedModel:
    with open(path, "rb") as fh:
        return loads_model(fh.read(), expect)


def serialize_head(head: HeadParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in head.arrays())


def serialize_base(base: BaseParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in base.arrays())
