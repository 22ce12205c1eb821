"""Compare the pure numpy and compiled correlation kernels.

Times the shapes that dominate a training step (forward and kernel
gradient for both default conv layers, batch 32) plus the single-sample
shape the gradient checker hammers, on each backend, and reports the
speedup. Agreement between backends is verified on every case while we
are at it.

Run from the repository root:

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeats 50
"""

import argparse
import time

import numpy as np

from coffar import kernels

FWD_CASES = [
    ("fwd  conv0 batch32", (32, 1, 20, 40), (8, 1, 3, 3)),
    ("fwd  conv1 batch32", (32, 8, 10, 20), (16, 8, 3, 3)),
    ("fwd  conv0 single ", (1, 1, 20, 40), (2, 1, 3, 3)),
]

GRAD_CASES = [
    ("grad conv0 batch32", (32, 1, 20, 40), (8,), (3, 3)),
    ("grad conv1 batch32", (32, 8, 10, 20), (16,), (3, 3)),
    ("grad conv0 single ", (1, 1, 20, 40), (2,), (3, 3)),
]


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_case(name, call, repeats):
    results = {}
    outputs = {}
    for backend in ("pure", "ext"):
        previous = kernels.use_backend(backend)
        try:
            outputs[backend] = call()
            results[backend] = best_of(call, repeats)
        finally:
            kernels.use_backend(previous)
    gap = float(np.max(np.abs(outputs["pure"] - outputs["ext"])))
    speedup = results["pure"] / results["ext"]
    print(f"{name}  pure {results['pure'] * 1e3:8.3f} ms   "
          f"ext {results['ext'] * 1e3:8.3f} ms   "
          f"speedup {speedup:5.1f}x   max|diff| {gap:.2e}")
    return gap


def main() -> int:
    parser = argparse.ArgumentParser(
        description="benchmark the correlation kernel backends")
    parser.add_argument("--repeats", type=int, default=20,
                        help="timing repetitions per case (best is kept)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.extension_available():
        print("compiled kernels are not built; nothing to compare")
        return 0

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for name, x_shape, w_shape in FWD_CASES:
        x = rng.standard_normal(x_shape)
        w = rng.standard_normal(w_shape)
        worst = max(worst, run_case(
            name, lambda x=x, w=w: kernels.corr2d_fwd(x, w), args.repeats))
    for name, x_shape, (co,), (kh, kw) in GRAD_CASES:
        x = rng.standard_normal(x_shape)
        gy = rng.standard_normal((x_shape[0], co, x_shape[2], x_shape[3]))
        worst = max(worst, run_case(
            name,
            lambda x=x, gy=gy: kernels.corr2d_grad_kernel(x, gy, kh, kw),
            args.repeats))
    print(f"worst cross-backend disagreement: {worst:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
