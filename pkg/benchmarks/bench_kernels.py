"""Time every hot kernel under the compiled and the pure-Python backend.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs are sized like one MovieLens-100K training epoch or evaluation pass.
"""

import argparse
import time

import numpy as np

from ids4nr import kernels


def _csr(rng, n_rows, n_cols, per_row):
    indptr = np.arange(0, n_rows * per_row + 1, per_row, dtype=np.int64)
    indices = np.concatenate([np.sort(rng.choice(n_cols, per_row, replace=False))
                              for _ in range(n_rows)])
    return indptr, indices


def cases(rng):
    users, items = 943, 1682
    indptr, indices = _csr(rng, users, items, 90)
    allowed = np.ones(items, dtype=bool)
    allowed[-337:] = False
    val_indptr, val_indices = _csr(rng, items, 32, 3)
    batch_users = rng.integers(0, users, 85_000)
    scores = rng.normal(size=(users, items)).astype(np.float32)
    theta = rng.normal(size=150_000).astype(np.float32)
    grad = rng.normal(size=150_000).astype(np.float32)
    target = np.zeros((items, 50), dtype=np.float32)
    rows = rng.integers(0, items, 128 * 5)
    values = rng.normal(size=(len(rows), 50)).astype(np.float32)
    edges_u = rng.integers(0, users, 100_000)
    edges_i = rng.integers(0, items, 100_000)
    return {
        "kcore_mask (100k edges, k=5)":
            lambda impl: kernels.kcore_mask(edges_u, edges_i, users, items, 5, impl=impl),
        "sample_negatives (85k users x 4)":
            lambda impl: kernels.sample_negatives(indptr, indices, batch_users, 4, items,
                                                  allowed, 1, impl=impl),
        "sample_disjoint (128 anchors)":
            lambda impl: kernels.sample_disjoint(rows[:128], val_indptr, val_indices,
                                                 allowed, 1, impl=impl),
        "topn (943 x 1682, N=10)":
            lambda impl: kernels.topn(scores, np.arange(users), indptr, indices, 10, impl=impl),
        "scatter_add_rows (640 x 50)":
            lambda impl: kernels.scatter_add_rows(target, rows, values, impl=impl),
        "adam_update (150k params)":
            lambda impl: kernels.adam_update(theta, grad, np.zeros_like(theta),
                                             np.ones_like(theta), 1e-3, 0.9, 0.999, 1e-8, 3,
                                             impl=impl),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = ["python"] + (["compiled"] if kernels._compiled is not None else [])
    print(f"{'kernel':36s}" + "".join(f"{b:>14s}" for b in backends) + f"{'speedup':>10s}")
    for name, fn in cases(rng).items():
        t = {b: best_of(lambda: fn(kernels.backend_module(b)), args.repeat) for b in backends}
        line = f"{name:36s}" + "".join(f"{t[b] * 1e3:12.3f}ms" for b in backends)
        if "compiled" in t:
            line += f"{t['python'] / t['compiled']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
