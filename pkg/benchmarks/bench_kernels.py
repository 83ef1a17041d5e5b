"""Benchmark the numba kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--rows 512] [--vocab 32000]
The numba path warms up once before timing so JIT compilation is excluded.
"""
import argparse
import time

import numpy as np

from valid_decoding import kernels


def bench(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=512)
    ap.add_argument("--vocab", type=int, default=32000)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    logits = rng.normal(size=(args.rows, args.vocab)) * 4
    probs = kernels._softmax_rows_np(logits)

    print(f"active backend: {kernels.backend()}")
    print(f"matrix: {args.rows} rows x {args.vocab} vocab, float64")

    rows = [("softmax numpy", kernels._softmax_rows_np, logits),
            ("entropy numpy", kernels._entropy_rows_np, probs)]
    if kernels.backend() == "numba":
        kernels.softmax_rows(logits[:2])  # warm up the JIT
        kernels.entropy_rows(probs[:2])
        rows += [("softmax numba", kernels.softmax_rows, logits),
                 ("entropy numba", kernels.entropy_rows, probs)]
    else:
        print("numba unavailable or disabled (VALID_NO_NUMBA); numpy only")

    results = {}
    for name, fn, data in rows:
        results[name] = bench(fn, data)
        print(f"{name:>16}: {results[name] * 1e3:8.2f} ms")

    for op in ("softmax", "entropy"):
        np_key, nb_key = f"{op} numpy", f"{op} numba"
        if nb_key in results:
            print(f"{op} speedup: {results[np_key] / results[nb_key]:.2f}x")


if __name__ == "__main__":
    main()
