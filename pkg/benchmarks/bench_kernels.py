"""Time the conv2d backends on real training shapes.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--threads N]

Runs forward and backward for every conv shape that appears in a training
step (the 7x7 stem, the per-stage 3x3 kernels at both strides, and the 1x1
fusion convs) on each available backend, and prints a table of per-call
times plus the numba speedup. The numba column only appears when the import
works; its first call per shape is compiled out of the timing.
"""

import argparse
import time

import numpy as np

from bmfa import kernels

# (label, (N, Cin, T, F), (Cout, Cin, kT, kF), stride) at batch 8, crop 64
CASES = [
    ("stem 7x7",        (8, 1, 64, 64),    (32, 1, 7, 7),     (1, 1)),
    ("stage1 3x3 s22",  (8, 32, 64, 64),   (32, 32, 3, 3),    (2, 2)),
    ("stage1 3x3",      (8, 32, 32, 32),   (32, 32, 3, 3),    (1, 1)),
    ("stage2 3x3 s12",  (8, 32, 32, 32),   (64, 32, 3, 3),    (1, 2)),
    ("stage2 3x3",      (8, 64, 32, 16),   (64, 64, 3, 3),    (1, 1)),
    ("stage3 3x3",      (8, 128, 32, 8),   (128, 128, 3, 3),  (1, 1)),
    ("stage4 3x3",      (8, 256, 32, 4),   (256, 256, 3, 3),  (1, 1)),
    ("lateral 1x1",     (8, 128, 32, 8),   (128, 128, 1, 1),  (1, 1)),
    ("afm squeeze 1x1", (8, 256, 32, 8),   (32, 256, 1, 1),   (1, 1)),
]


def time_call(fn, repeats):
    fn()  # warm-up (and numba compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(backend, repeats):
    kernels.use_backend(backend)
    rng = np.random.default_rng(0)
    rows = {}
    for label, xshape, wshape, stride in CASES:
        pad = (wshape[2] // 2, wshape[3] // 2)
        x = rng.standard_normal(xshape).astype(np.float32)
        w = rng.standard_normal(wshape).astype(np.float32)
        y = kernels.conv2d_forward(x, w, stride, pad)
        gy = np.ones_like(y)
        fwd = time_call(lambda: kernels.conv2d_forward(x, w, stride, pad),
                        repeats)
        bwd = time_call(
            lambda: kernels.conv2d_backward(x, w, stride, pad, gy), repeats)
        rows[label] = (fwd, bwd)
    kernels.use_backend("auto")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    kernels.set_num_threads(args.threads)

    backends = kernels.available_backends()
    results = {b: bench(b, args.repeats) for b in backends}

    print(f"threads={args.threads} repeats={args.repeats} (best-of)")
    header = f"{'case':<16s} {'dir':<4s}"
    for b in backends:
        header += f" {b + ' (ms)':>12s}"
    if "numba" in backends:
        header += f" {'speedup':>8s}"
    print(header)
    for label, *_ in CASES:
        for j, d in enumerate(("fwd", "bwd")):
            line = f"{label if d == 'fwd' else '':<16s} {d:<4s}"
            for b in backends:
                line += f" {1e3 * results[b][label][j]:12.3f}"
            if "numba" in backends:
                ratio = results["numpy"][label][j] / results["numba"][label][j]
                line += f" {ratio:7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
