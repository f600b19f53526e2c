"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Covers the three hot shapes: the forward 3x3 convolution, the
filter-gradient convolution (kernel nearly as large as the image), and
max-pooling forward/backward.
"""

import argparse
import time

import numpy as np

from memegp.kernels import numba_backend, numpy_backend


def time_op(fn, args, repeats):
    fn(*args)  # warmup (and numba compile)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(20):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / 20)
    return best * 1e6  # us


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = []
    for side in (32, 64, 256):
        img = rng.random((side, side))
        filt = rng.uniform(-1, 1, (3, 3))
        cases.append((f"conv 3x3 fwd {side}x{side}", "conv2d_valid", (img, filt)))
        grad = rng.standard_normal((side - 2, side - 2))
        cases.append((f"conv grad-w  {side}x{side}", "conv2d_valid", (img, grad)))
        cases.append((f"pool fwd     {side}x{side}", "maxpool2x2", (img,)))
        g = rng.standard_normal((side // 2, side // 2))
        cases.append((f"pool bwd     {side}x{side}", "maxpool2x2_backward", (img, g)))

    print(f"{'case':<24} {'numpy (us)':>12} {'numba (us)':>12} {'speedup':>9}")
    for name, op, op_args in cases:
        t_np = time_op(getattr(numpy_backend, op), op_args, args.repeats)
        t_nb = time_op(getattr(numba_backend, op), op_args, args.repeats)
        print(f"{name:<24} {t_np:>12.1f} {t_nb:>12.1f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
