"""Backend selection for the characteristic kernels.

The compiled extension handles two-dimensional grids; anything else, or
``TWOPHASE_PURE=1`` in the environment, routes to the NumPy fallback.
"""
import os

from . import _pykernels

try:
    if os.environ.get("TWOPHASE_PURE") == "1":
        raise ImportError
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on build
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "numpy"


def _pick(ndim):
    return _ckernels if (_ckernels is not None and ndim == 2) else _pykernels


def interp(field, points, dx, z0, dz):
    return _pick(field.ndim).interp(field, points, dx, z0, dz)


def rk4_paths(points, vel0, vel1, g0, g1, dx, z0, dz, T, nsub=4, backward=True):
    return _pick(g0.ndim).rk4_paths(points, vel0, vel1, g0, g1, dx, z0, dz,
                                    float(T), int(nsub), bool(backward))
