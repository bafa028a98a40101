"""Compare the compiled kernel backend against the pure-python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from spiketim.kernels import _py

try:
    from spiketim.kernels import _core
except ImportError:
    _core = None

CASES = [
    ("conv2d 16x2x8x8 k3", (16, 2, 8, 8), (8, 2, 3, 3)),
    ("conv2d 16x8x32x32 k3", (16, 8, 32, 32), (16, 8, 3, 3)),
    ("conv2d 16x64x16x16 k3", (16, 64, 16, 16), (64, 64, 3, 3)),
]


def timeit(fn, repeat):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    backends = [("python", _py)] + ([("cython", _core)] if _core else [])
    print(f"{'case':28s} {'op':8s} " + " ".join(f"{n:>10s}" for n, _ in backends))
    for name, xs, ws in CASES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        gy = np.ascontiguousarray(rng.standard_normal(xs[:1] + ws[:1] + xs[2:]).astype(np.float32))
        fwd = [timeit(lambda b=b: b.conv2d_forward(x, w, 1, 1), args.repeat) for _, b in backends]
        bwd = [
            timeit(lambda b=b: b.conv2d_backward(x, w, gy, 1, 1), args.repeat)
            for _, b in backends
        ]
        print(f"{name:28s} {'forward':8s} " + " ".join(f"{t*1e3:9.3f}ms" for t in fwd))
        print(f"{'':28s} {'backward':8s} " + " ".join(f"{t*1e3:9.3f}ms" for t in bwd))
    x = rng.standard_normal((16, 32, 32, 32)).astype(np.float32)
    pool = [timeit(lambda b=b: b.maxpool2x2_forward(x), args.repeat) for _, b in backends]
    print(f"{'maxpool2x2 16x32x32x32':28s} {'forward':8s} " + " ".join(f"{t*1e3:9.3f}ms" for t in pool))


if __name__ == "__main__":
    main()
