"""Time every hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel is first run once per backend (numba compiles on that call) and
the outputs are compared, so a speed number is never reported for a kernel
whose backends disagree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mxfontpp import kernels
from mxfontpp.glyphgen import build_charset, glyph_segments, make_fonts


def _cases(rng):
    x = rng.standard_normal((40, 8, 16, 16)).astype(np.float32)
    w = rng.standard_normal((16, 8, 3, 3)).astype(np.float32)
    gy = kernels.conv2d_forward(x, w, 2, 1)
    segs = glyph_segments(build_charset(20, 0)[5], make_fonts(4, 0)[2])
    img = rng.random((32, 32))
    cost = rng.random((4, 4))
    return {
        "conv2d_forward (40x8x16x16, 3x3/2)": lambda: kernels.conv2d_forward(x, w, 2, 1),
        "conv2d_backward (40x8x16x16, 3x3/2)": lambda: kernels.conv2d_backward(x, w, gy, 2, 1),
        "stroke_coverage (32x32, ss=4)": lambda: kernels.stroke_coverage(segs, 1.0, 32, 4),
        "window_mean (32x32, 8x8)": lambda: kernels.window_mean(img, 8),
        "linear_assignment (4x4)": lambda: kernels.linear_assignment(cost),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    # float32 sums are accumulated in different orders, so compare against the array's scale
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b).max(initial=0.0) <= 1e-5 * max(np.abs(b).max(initial=0.0), 1.0)


def _time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        results, times = {}, {}
        for backend in ("numba", "numpy"):
            with kernels.use_backend(backend):
                results[backend] = fn()
                times[backend] = _time(fn, args.repeat) * 1e3
        if not _same(results["numba"], results["numpy"]):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<40s} {times['numba']:>10.3f} {times['numpy']:>10.3f} {times['numpy'] / times['numba']:>7.2f}x")


if __name__ == "__main__":
    main()
