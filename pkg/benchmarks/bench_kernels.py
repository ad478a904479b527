#!/usr/bin/env python3
"""Time the compiled kernel extension against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--size N] [--repeats K]

Also verifies both backends produce bit-identical outputs on every
benchmark case before reporting timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tapercal._kernels import _fallback

try:
    from tapercal._kernels import _cyext
except ImportError:
    _cyext = None


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=1200, help="square grid edge")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    n = args.size
    rng = np.random.default_rng(0)
    src = np.ascontiguousarray(rng.uniform(0, 8, (n, n)))
    mask = np.ascontiguousarray(rng.uniform(size=(n, n)) < 0.02).view(np.uint8)
    m = (n * n) // 2
    fr = np.ascontiguousarray(rng.uniform(-0.5, n - 0.5, m))
    fc = np.ascontiguousarray(rng.uniform(-0.5, n - 0.5, m))
    taps = np.exp(-np.linspace(-2, 2, 11) ** 2)
    taps = np.ascontiguousarray(taps / taps.sum())

    cases = [
        ("bilinear_gather", lambda impl: impl.bilinear_gather(src, mask, fr, fc)),
        ("bicubic_gather", lambda impl: impl.bicubic_gather(src, mask, fr, fc)),
        ("sep_correlate_valid", lambda impl: impl.sep_correlate_valid(src, taps)),
    ]

    print(f"grid {n}x{n}, {m} sample points, best of {args.repeats}")
    header = f"{'kernel':<22}{'python':>12}{'compiled':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_py, r_py = best_of(lambda: call(_fallback), args.repeats)
        if _cyext is None:
            print(f"{name:<22}{t_py * 1e3:>10.1f}ms{'n/a':>12}{'n/a':>10}")
            continue
        t_c, r_c = best_of(lambda: call(_cyext), args.repeats)
        py_out = r_py[0] if isinstance(r_py, tuple) else r_py
        c_out = r_c[0] if isinstance(r_c, tuple) else r_c
        identical = np.array_equal(py_out, c_out)
        if not identical:
            print(f"{name:<22} BACKENDS DISAGREE")
            return 1
        print(f"{name:<22}{t_py * 1e3:>10.1f}ms{t_c * 1e3:>10.1f}ms{t_py / t_c:>9.1f}x")
    if _cyext is None:
        print("\ncompiled extension not built; showing fallback timings only")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
