#!/usr/bin/env python3
"""Compare the numba kernels against their pure-numpy fallbacks.

Times each hot kernel on representative desk-scale shapes and prints the
median wall-clock per call plus the speedup.  Results also double as an
equivalence check: both backends must agree to float64 roundoff.

Run:  python3 benchmarks/backend_bench.py [--n 512] [--repeats 20]
"""

import argparse
import time

import numpy as np

from sparseattn import _kernels


def time_ms(fn, repeats):
    fn()  # warmup / JIT
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(samples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=512, help="sequence length")
    ap.add_argument("--d", type=int, default=64, help="head dimension")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    n, d = args.n, args.d
    Z = rng.normal(size=(n, n))
    valid = np.tril(np.ones((n, n), dtype=bool))
    A = rng.normal(size=(n, 4))
    B = rng.normal(size=(16, 4))
    Q = rng.normal(size=(n, d))
    K = rng.normal(size=(n, d))
    # banded CSR: every row scores a +-8 window
    cols, indptr = [], [0]
    for i in range(n):
        js = range(max(0, i - 8), min(n, i + 9))
        cols.extend(js)
        indptr.append(len(cols))
    indptr = np.asarray(indptr, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    scale = 1.0 / np.sqrt(d)

    cases = [
        ("entmax15_masked_rows",
         lambda: _kernels._entmax15_masked_rows_nb(Z, valid),
         lambda: _kernels._entmax15_masked_rows_np(Z, valid)),
        ("pairwise_sqdist",
         lambda: _kernels._pairwise_sqdist_nb(A, A),
         lambda: _kernels._pairwise_sqdist_np(A, A)),
        ("kmeans_assign",
         lambda: _kernels._kmeans_assign_nb(A, B),
         lambda: _kernels._kmeans_assign_np(A, B)),
        ("sparse_rows_entmax15",
         lambda: _kernels._sparse_rows_entmax15_nb(Q, K, indptr, cols, scale),
         lambda: _kernels._sparse_rows_entmax15_np(Q, K, indptr, cols, scale)),
    ]

    print(f"kernel backend comparison  (n={n}, d={d}, repeats={args.repeats})")
    print(f"{'kernel':<24} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, nb_fn, np_fn in cases:
        nb_out = nb_fn()
        np_out = np_fn()
        first = nb_out[0] if isinstance(nb_out, tuple) else nb_out
        second = np_out[0] if isinstance(np_out, tuple) else np_out
        err = float(np.max(np.abs(np.asarray(first, dtype=np.float64)
                                  - np.asarray(second, dtype=np.float64))))
        if err > 1e-9:
            raise SystemExit(f"{name}: backends disagree (max abs diff {err})")
        t_nb = time_ms(nb_fn, args.repeats)
        t_np = time_ms(np_fn, args.repeats)
        print(f"{name:<24} {t_nb:>10.3f} {t_np:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
