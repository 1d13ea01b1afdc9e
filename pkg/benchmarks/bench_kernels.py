"""Compiled vs pure-Python convolution kernels.

Times the forward cross-correlation and the kernel gradient on shapes the
training loop actually hits, and prints GFLOPS per backend plus the speedup.

    python benchmarks/bench_kernels.py [--repeat 5] [--threads 1]
"""

import argparse
import os
import time

import numpy as np

from sornet import backend

# (label, batch, c_in, c_out, height, width): toy training, full-size training, x2 upsampler
SHAPES = [
    ("toy 16ch", 16, 16, 16, 48, 48),
    ("full 64ch", 16, 64, 64, 48, 48),
    ("upsampler 64->256", 4, 64, 256, 48, 48),
]


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    os.environ["SORNET_THREADS"] = str(args.threads)

    backends = ["python"] + (["compiled"] if backend.NAME == "compiled" else [])
    if len(backends) == 1:
        print("compiled extension not available; timing the fallback only")
    print(f"threads={args.threads} repeat={args.repeat} (best of)")
    print(f"{'shape':<20} {'op':<8} " + " ".join(f"{b + ' GFLOPS':>16}" for b in backends)
          + ("  speedup" if len(backends) == 2 else ""))
    rng = np.random.default_rng(0)
    for label, n, ci, co, h, w in SHAPES:
        xp = rng.standard_normal((n, ci, h + 2, w + 2)).astype(np.float32)
        wt = rng.standard_normal((3, 3, ci, co)).astype(np.float32)
        dy = rng.standard_normal((n, co, h, w)).astype(np.float32)
        flops = 2.0 * n * co * ci * 9 * h * w
        for op in ("forward", "dkernel"):
            rates = []
            for b in backends:
                if op == "forward":
                    t = _best(lambda: backend.conv_same(xp, wt, backend=b), args.repeat)
                else:
                    t = _best(lambda: backend.kernel_grad(xp, dy, 3, 3, backend=b), args.repeat)
                rates.append(flops / t / 1e9)
            row = f"{label:<20} {op:<8} " + " ".join(f"{r:16.2f}" for r in rates)
            if len(rates) == 2:
                row += f"  {rates[1] / rates[0]:7.2f}x"
            print(row)


if __name__ == "__main__":
    main()
