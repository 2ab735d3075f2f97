"""Timing of the compiled and NumPy characteristic kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 32 64 128] [--repeat 5]

Prints one row per kernel and grid size with the best wall time of each
backend, the speed-up and the largest difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from twophase import _pykernels

try:
    from twophase import _ckernels
except ImportError:
    _ckernels = None


def _problem(m, rng):
    L, H = 2 * np.pi, 8.0
    dx, dz, z0 = L / m, 2 * H / (2 * m), -H
    x = np.arange(m) * dx
    z = z0 + np.arange(2 * m + 1) * dz
    X, Z = np.meshgrid(x, z, indexing="ij")
    vel0 = np.stack([np.sin(X) * np.exp(-Z ** 2 / 8), 0.3 * np.cos(X) * np.exp(-Z ** 2 / 8)])
    vel1 = 1.1 * vel0
    g0 = np.cos(X) * np.exp(-Z ** 2 / 4)
    g1 = 0.9 * g0
    pts = np.stack([X.ravel() + 0.1 * rng.random(X.size), Z.ravel()])
    return pts, vel0, vel1, g0, g1, dx, z0, dz


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled backend not built; timing the NumPy backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<10}{'grid':>10}{'numpy [s]':>12}{'cython [s]':>12}{'speed-up':>10}{'max diff':>11}")
    for m in args.sizes:
        pts, vel0, vel1, g0, g1, dx, z0, dz = _problem(m, rng)
        cases = {
            "interp": lambda mod: mod.interp(g0, pts, dx, z0, dz),
            "rk4_paths": lambda mod: mod.rk4_paths(pts, vel0, vel1, g0, g1, dx, z0, dz,
                                                   0.01, 4, True),
        }
        for name, call in cases.items():
            t_py = _best(lambda: call(_pykernels), args.repeat)
            if _ckernels is None:
                print(f"{name:<10}{m:>5}x{2 * m + 1:<4}{t_py:>12.4f}{'-':>12}{'-':>10}{'-':>11}")
                continue
            t_c = _best(lambda: call(_ckernels), args.repeat)
            a, b = call(_pykernels), call(_ckernels)
            if isinstance(a, tuple):
                diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
            else:
                diff = float(np.max(np.abs(a - b)))
            print(f"{name:<10}{m:>5}x{2 * m + 1:<4}{t_py:>12.4f}{t_c:>12.4f}"
                  f"{t_py / t_c:>10.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
