"""Benchmark the compiled conv kernels against the numpy fallback.

Shapes mirror a training step of the default denoiser on a 16x16-packed
batch: three stride-2 encoder convs, two stride-1 decoder convs on
concatenated skips, and the full-resolution output conv.

Run: python benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np

from adlraw.engine.conv_backend import get_backends

SHAPES = [
    # (label, N, Cin, H, W, Cout, K, stride)
    ("enc1 s2", 17, 4, 32, 32, 16, 3, 2),
    ("enc2 s2", 17, 16, 16, 16, 32, 3, 2),
    ("enc3 s2", 17, 32, 8, 8, 64, 3, 2),
    ("dec1 s1", 17, 96, 8, 8, 32, 3, 1),
    ("dec2 s1", 17, 48, 16, 16, 16, 3, 1),
    ("dec3 s1", 17, 16, 32, 32, 4, 3, 1),
]


def bench_one(impl, n, ci, h, w, co, k, stride, repeats):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((n, ci, h + 2, w + 2)).astype(np.float32)
    wt = rng.standard_normal((co, ci, k, k)).astype(np.float32)
    y = impl.conv_forward(xp, wt, stride)
    gy = np.ones_like(y)

    def timeit(fn):
        fn()  # warmup
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        return (time.perf_counter() - t0) / repeats * 1e3

    fwd = timeit(lambda: impl.conv_forward(xp, wt, stride))
    bwi = timeit(lambda: impl.conv_backward_input(gy, wt, stride, h + 2, w + 2))
    bww = timeit(lambda: impl.conv_backward_weight(gy, xp, k, k, stride))
    return fwd, bwi, bww


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()

    backends = get_backends()
    print(f"available backends: {', '.join(backends)}")
    header = f"{'shape':<10}" + "".join(f"{name + ' ' + p:>16}" for name in backends
                                        for p in ("fwd", "bw_in", "bw_w"))
    print(header)
    totals = {name: 0.0 for name in backends}
    for label, n, ci, h, w, co, k, stride in SHAPES:
        row = f"{label:<10}"
        for name, impl in backends.items():
            fwd, bwi, bww = bench_one(impl, n, ci, h, w, co, k, stride, args.repeats)
            totals[name] += fwd + bwi + bww
            row += f"{fwd:>15.3f}ms{bwi:>14.3f}ms{bww:>14.3f}ms"
        print(row)
    print("totals (one full fwd+bwd sweep): " +
          ", ".join(f"{name} {t:.2f} ms" for name, t in totals.items()))


if __name__ == "__main__":
    main()
