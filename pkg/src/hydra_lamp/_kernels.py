"""Hot numeric kernels.

Every kernel has two implementations with identical signatures: a loop
version compiled with numba ``@njit`` and a vectorised numpy version. The
numba path is used when numba imports and ``HYDRA_NUMBA`` is not set to
``0``; ``HYDRA_NUMBA=0`` forces the numpy path (useful for debugging and
for platforms without llvmlite).

Model kernels operate on a factorized scorer: hashed sparse features
``(idx, val)`` -> ``a = E^T x`` -> ``s = tanh(B1 a + c1)`` ->
``h = tanh(W1 s + b1)`` -> ``p = softmax(W2 h + b2)`` with two outputs.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _jit(fn):
    return _njit(cache=True)(fn) if _HAVE_NUMBA else fn

USE_NUMBA = _HAVE_NUMBA and os.environ.get("HYDRA_NUMBA", "1").strip() not in ("0", "false", "no")


# -- numpy implementations -------------------------------------------------

def _np_forward(E, B1, c1, W1, W2, b1, b2, idx, val):
    a = val @ E[idx] if idx.size else np.zeros(E.shape[1])
    s = np.tanh(B1 @ a + c1)
    h = np.tanh(W1 @ s + b1)
    z = W2 @ h + b2
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _np_accumulate(E, B1, c1, W1, W2, b1, b2, idx, val, y, scale, eps, with_base,
                   gE, gB1, gc1, gW1, gW2, gb1, gb2):
    a = val @ E[idx] if idx.size else np.zeros(E.shape[1])
    s = np.tanh(B1 @ a + c1)
    h = np.tanh(W1 @ s + b1)
    z = W2 @ h + b2
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    p1 = p[1]
    pc = min(max(p1, eps), 1.0 - eps)
    loss = -y * math.log(pc) - (1.0 - y) * math.log(1.0 - pc)
    if not (eps < p1 < 1.0 - eps):
        return loss
    gz = np.array([y - p1, p1 - y]) * scale
    gW2 += np.outer(gz, h)
    gb2 += gz
    gh2 = (W2.T @ gz) * (1.0 - h * h)
    gW1 += np.outer(gh2, s)
    gb1 += gh2
    if with_base:
        gs = (W1.T @ gh2) * (1.0 - s * s)
        gB1 += np.outer(gs, a)
        gc1 += gs
        ga = B1.T @ gs
        np.add.at(gE, idx, np.outer(val, ga))
    return loss


def _np_lcs_length(a, b):
    n, m = a.size, b.size
    if n == 0 or m == 0:
        return 0
    eq = a[:, None] == b[None, :]
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        # row recurrence: cur[j+1] = prev[j] + 1 if eq else max(prev[j+1], cur[j])
        diag = np.where(eq[i], prev[:-1] + 1, 0)
        cand = np.maximum(diag, prev[1:])
        cur = np.maximum.accumulate(np.concatenate(([0], cand)))
        prev = cur
    return int(prev[m])


def _np_bm25(starts, ends, idf, post_docs, post_tf, doc_lens, avg_len, k1, b, n_docs):
    scores = np.zeros(n_docs)
    if avg_len <= 0:
        return scores
    for t in range(starts.size):
        docs = post_docs[starts[t]:ends[t]]
        tf = post_tf[starts[t]:ends[t]].astype(np.float64)
        norm = k1 * (1.0 - b + b * doc_lens[docs] / avg_len)
        scores[docs] += idf[t] * tf * (k1 + 1.0) / (tf + norm)
    return scores


# -- loop implementations (numba targets) ----------------------------------

@_jit
def _loop_hidden(E, B1, c1, W1, b1, idx, val):
    d = E.shape[1]
    a = np.zeros(d)
    for k in range(idx.size):
        row = idx[k]
        v = val[k]
        for j in range(d):
            a[j] += v * E[row, j]
    s = np.empty(d)
    for i in range(d):
        acc = c1[i]
        for j in range(d):
            acc += B1[i, j] * a[j]
        s[i] = math.tanh(acc)
    h = np.empty(d)
    for i in range(d):
        acc = b1[i]
        for j in range(d):
            acc += W1[i, j] * s[j]
        h[i] = math.tanh(acc)
    return a, s, h


@_jit
def _loop_forward(E, B1, c1, W1, W2, b1, b2, idx, val):
    a, s, h = _loop_hidden(E, B1, c1, W1, b1, idx, val)
    o = W2.shape[0]
    d = h.size
    z = np.empty(o)
    for r in range(o):
        acc = b2[r]
        for j in range(d):
            acc += W2[r, j] * h[j]
        z[r] = acc
    zmax = z.max()
    tot = 0.0
    for r in range(o):
        z[r] = math.exp(z[r] - zmax)
        tot += z[r]
    for r in range(o):
        z[r] /= tot
    return z


@_jit
def _loop_accumulate(E, B1, c1, W1, W2, b1, b2, idx, val, y, scale, eps, with_base,
                     gE, gB1, gc1, gW1, gW2, gb1, gb2):
    a, s, h = _loop_hidden(E, B1, c1, W1, b1, idx, val)
    d = h.size
    z0 = b2[0]
    z1 = b2[1]
    for j in range(d):
        z0 += W2[0, j] * h[j]
        z1 += W2[1, j] * h[j]
    # p1 = sigmoid(z1 - z0), computed stably
    diff = z1 - z0
    if diff >= 0:
        p1 = 1.0 / (1.0 + math.exp(-diff))
    else:
        ez = math.exp(diff)
        p1 = ez / (1.0 + ez)
    pc = min(max(p1, eps), 1.0 - eps)
    loss = -y * math.log(pc) - (1.0 - y) * math.log(1.0 - pc)
    if not (eps < p1 < 1.0 - eps):
        return loss
    g1 = (p1 - y) * scale
    g0 = -g1
    gh2 = np.empty(d)
    for j in range(d):
        gW2[0, j] += g0 * h[j]
        gW2[1, j] += g1 * h[j]
        gh2[j] = (W2[0, j] * g0 + W2[1, j] * g1) * (1.0 - h[j] * h[j])
    gb2[0] += g0
    gb2[1] += g1
    for i in range(d):
        gb1[i] += gh2[i]
        for j in range(d):
            gW1[i, j] += gh2[i] * s[j]
    if with_base:
        gs = np.zeros(d)
        for i in range(d):
            for j in range(d):
                gs[j] += W1[i, j] * gh2[i]
        for j in range(d):
            gs[j] *= 1.0 - s[j] * s[j]
        ga = np.zeros(d)
        for i in range(d):
            gc1[i] += gs[i]
            for j in range(d):
                gB1[i, j] += gs[i] * a[j]
                ga[j] += B1[i, j] * gs[i]
        for k in range(idx.size):
            row = idx[k]
            v = val[k]
            for j in range(d):
                gE[row, j] += v * ga[j]
    return loss


@_jit
def _loop_lcs_length(a, b):
    n = a.size
    m = b.size
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cur[0] = 0
        for j in range(m):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        prev, cur = cur, prev
    return prev[m]


@_jit
def _loop_bm25(starts, ends, idf, post_docs, post_tf, doc_lens, avg_len, k1, b, n_docs):
    scores = np.zeros(n_docs)
    if avg_len <= 0:
        return scores
    for t in range(starts.size):
        w = idf[t]
        for k in range(starts[t], ends[t]):
            doc = post_docs[k]
            tf = float(post_tf[k])
            norm = k1 * (1.0 - b + b * doc_lens[doc] / avg_len)
            scores[doc] += w * tf * (k1 + 1.0) / (tf + norm)
    return scores


NUMPY_KERNELS = {
    "forward": _np_forward,
    "accumulate": _np_accumulate,
    "lcs_length": _np_lcs_length,
    "bm25": _np_bm25,
}


NUMBA_KERNELS = {
    "forward": _loop_forward,
    "accumulate": _loop_accumulate,
    "lcs_length": _loop_lcs_length,
    "bm25": _loop_bm25,
} if _HAVE_NUMBA else {}

ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS
BACKEND = "numba" if USE_NUMBA else "numpy"

forward = ACTIVE["forward"]
accumulate = ACTIVE["accumulate"]
lcs_length = ACTIVE["lcs_length"]
bm25 = ACTIVE["bm25"]
