"""Timing comparison: compiled conv/pool kernels vs the numpy fallback.

Both backends are loaded side by side, checked for bit-identical outputs,
and timed on shapes the image encoder actually sees. Matrix products are
BLAS either way and are not benchmarked here.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from metaquill._kernels import np_backend

try:
    from metaquill._kernels import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    out = []
    for c, h, w, kh, s in ((3, 32, 32, 3, 1), (8, 30, 30, 3, 1),
                           (16, 13, 13, 3, 2), (32, 6, 6, 3, 1)):
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        label = f"im2col {c}x{h}x{w} k{kh} s{s}"
        out.append((label, lambda b, x=x, kh=kh, s=s: b.im2col(x, kh, kh, s, s)))

        cols = np_backend.im2col(x, kh, kh, s, s)
        label = f"col2im {c}x{h}x{w} k{kh} s{s}"
        out.append((label, lambda b, cols=cols, c=c, h=h, w=w, kh=kh, s=s:
                    b.col2im(cols, c, h, w, kh, kh, s, s)))
    for c, h, w in ((8, 30, 30), (16, 14, 14), (32, 6, 6)):
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        out.append((f"maxpool2x2 {c}x{h}x{w}", lambda b, x=x: b.maxpool2x2(x)))
    return out


def as_tuple(result):
    return result if isinstance(result, tuple) else (result,)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    if _ckernels is None:
        print("compiled backend not built; run pip install -e . first")
        return 1

    rng = np.random.default_rng(0)
    rows = []
    for label, call in cases(rng):
        got_c = as_tuple(call(_ckernels))
        got_np = as_tuple(call(np_backend))
        for a, b in zip(got_c, got_np):
            assert np.array_equal(a, b), f"{label}: backends disagree"
        t_c = best_of(lambda: call(_ckernels), args.repeats)
        t_np = best_of(lambda: call(np_backend), args.repeats)
        rows.append((label, t_c * 1e6, t_np * 1e6, t_np / t_c))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'compiled us':>12}  {'numpy us':>12}  {'speedup':>8}")
    for label, t_c, t_np, ratio in rows:
        print(f"{label:<{width}}  {t_c:>12.1f}  {t_np:>12.1f}  {ratio:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
