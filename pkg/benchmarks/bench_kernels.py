"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--batch 32] [--size 28] [--reps 5]

Warms the JIT first, then times conv forward/backward and bilinear
sampling on B-CNN-like shapes and prints a speedup table.
"""

import argparse
import time

import numpy as np

from itn.kernels import numba_backend, numpy_backend


def bench(fn, reps):
    fn()  # warm-up (JIT compile / cache load)
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--size", type=int, default=28)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, c, s = args.batch, args.channels, args.size
    x = rng.normal(size=(n, 1, s, s))
    k1 = rng.normal(size=(c, 1, 5, 5))
    h = rng.normal(size=(n, c, s // 2, s // 2))
    k2 = rng.normal(size=(c, c, 5, 5))
    y2_shape = numpy_backend.conv2d_forward(h, k2, 2).shape
    dy = rng.normal(size=y2_shape)
    grid = rng.uniform(-1, 1, size=(n, s, s, 2))

    cases = {
        f"conv 1->{c} {s}x{s} s2 fwd":
            lambda b: b.conv2d_forward(x, k1, 2),
        f"conv {c}->{c} {s//2}x{s//2} s2 fwd":
            lambda b: b.conv2d_forward(h, k2, 2),
        f"conv {c}->{c} input grad":
            lambda b: b.conv2d_input_grad(dy, k2, h.shape, 2),
        f"conv {c}->{c} kernel grad":
            lambda b: b.conv2d_kernel_grad(dy, h, k2.shape, 2),
        f"bilinear {s}x{s} fwd":
            lambda b: b.bilinear_forward(x, grid),
        f"bilinear {s}x{s} grads":
            lambda b: b.bilinear_input_grads(x, x, grid),
    }

    print(f"{'kernel':34s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        tn = bench(lambda: fn(numba_backend), args.reps)
        tp = bench(lambda: fn(numpy_backend), args.reps)
        print(f"{name:34s} {tn*1e3:9.2f}ms {tp*1e3:9.2f}ms {tp/tn:7.2f}x")


if __name__ == "__main__":
    main()
