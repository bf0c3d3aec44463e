"""Time the numba and numpy kernel paths on representative workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly from the kernel tables, so the benchmark
does not depend on HYDRA_NUMBA.
"""

import argparse
import time

import numpy as np

from hydra_lamp import _kernels
from hydra_lamp.factorized import FactorizedModel, TextEncoderConfig, featurize
from hydra_lamp.retriever import build_index_from_texts, _query_rows


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(seed=0):
    rng = np.random.default_rng(seed)
    cfg = TextEncoderConfig(4096, 64, 2)
    model = FactorizedModel(cfg, seed=seed)
    head = model.ensure_head("u")
    vocab = [f"w{i}" for i in range(500)]
    texts = [" ".join(rng.choice(vocab, 40)) for _ in range(200)]
    feats = [featurize(t, cfg.hash_dim, cfg.ngram_max) for t in texts]
    labels = rng.integers(0, 2, len(texts)).astype(float)
    grads = [np.zeros_like(a) for a in model.base.arrays() + head.arrays()]

    def accumulate(k):
        def run():
            for (idx, val), y in zip(feats, labels):
                k["accumulate"](*model.base.arrays(), *head.arrays(), idx, val, y, 1.0,
                                1e-12, True, *grads)
        return run

    def forward(k):
        def run():
            for idx, val in feats:
                k["forward"](*model.base.arrays(), *head.arrays(), idx, val)
        return run

    seqs = [(rng.integers(0, 50, 120), rng.integers(0, 50, 120)) for _ in range(50)]

    def lcs(k):
        def run():
            for a, b in seqs:
                k["lcs_length"](a, b)
        return run

    docs = [" ".join(rng.choice(vocab, 30)) for _ in range(2000)]
    index = build_index_from_texts(docs)
    queries = [" ".join(rng.choice(vocab, 8)) for _ in range(50)]
    rows = [_query_rows(index, q) for q in queries]

    def bm25(k):
        def run():
            for starts, ends, idf in rows:
                k["bm25"](starts, ends, idf, index.post_docs, index.post_tf, index.doc_lengths,
                          index.avg_doc_len, 1.2, 0.75, index.n_docs)
        return run

    return {"accumulate (200 samples, d=64)": accumulate, "forward (200 samples, d=64)": forward,
            "lcs (50 pairs, 120x120)": lcs, "bm25 (50 queries, 2000 docs)": bm25}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.NUMBA_KERNELS:
        print("numba unavailable; only the numpy path can run")
    print(f"{'workload':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, make in workloads().items():
        t_np = best_of(make(_kernels.NUMPY_KERNELS), args.repeat)
        if _kernels.NUMBA_KERNELS:
            make(_kernels.NUMBA_KERNELS)()  # compile outside the timed region
            t_nb = best_of(make(_kernels.NUMBA_KERNELS), args.repeat)
            print(f"{name:34s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:34s} {t_np * 1e3:10.2f} {'-':>10s}")


if __name__ == "__main__":
    main()
