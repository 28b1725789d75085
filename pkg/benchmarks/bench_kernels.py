"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from capfade import _kernels


def cases(rng):
    n = 1500
    x = np.arange(1.0, n + 1)
    y = 2.0 - np.cumsum(rng.uniform(0, 1e-3, n))
    xb, w, b = rng.normal(size=(16, 8, 200)), rng.normal(size=(16, 8, 3)), rng.normal(size=16)
    g = rng.normal(size=(16, 16, 200))
    xs, ws, bs = rng.normal(size=(16, 1, 400)), rng.normal(size=(8, 1, 3)), rng.normal(size=8)
    return {
        "knee_sse L=1500": lambda impl: _kernels.knee_sse(x, y, 3, impl=impl),
        "conv fwd 16x8->16 m=200": lambda impl: _kernels.conv1d_forward(xb, w, b, impl=impl),
        "conv bwd 16x8->16 m=200": lambda impl: _kernels.conv1d_backward(xb, w, g, impl=impl),
        "conv fwd 16x1->8 m=400": lambda impl: _kernels.conv1d_forward(xs, ws, bs, impl=impl),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    backends = _kernels.backends()
    print(f"active backend: {_kernels.BACKEND}; available: {', '.join(backends)}")
    print(f"{'kernel':28s}" + "".join(f"{name:>14s}" for name in backends) + "   speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, impl in backends.items():
            fn(impl)
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e6
        row = f"{label:28s}" + "".join(f"{t:12.1f}us" for t in times.values())
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:6.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
