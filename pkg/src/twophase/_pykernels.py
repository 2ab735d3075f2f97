"""Pure NumPy characteristic kernels (fallback for the compiled core).

Grids are periodic along the tangential axes (spacing ``dx``) and
uniform along the normal axis starting at ``z0`` with spacing ``dz``.
Points leaving the normal range are clamped, which continues the fields
constantly in ``x_N``.  Interpolation is four-point cubic Lagrange per axis.
"""
import itertools

import numpy as np


def _weights(t):
    return (
        -t * (t - 1) * (t - 2) / 6,
        (t + 1) * (t - 1) * (t - 2) / 2,
        -(t + 1) * t * (t - 2) / 2,
        (t + 1) * t * (t - 1) / 6,
    )


def _stencils(points, shape, dx, z0, dz):
    """Per-axis (base index, weights) for every point; ``points`` is ``(N, P)``."""
    nd = len(shape)
    out = []
    for a in range(nd - 1):
        p = points[a] / dx
        i = np.floor(p).astype(np.int64)
        out.append((i, _weights(p - i), shape[a], True))
    m = shape[-1]
    p = np.clip((points[-1] - z0) / dz, 0.0, m - 1.0)
    i = np.clip(np.floor(p).astype(np.int64), 1, m - 3)
    out.append((i, _weights(p - i), m, False))
    return out


def interp(field, points, dx, z0, dz):
    """Cubic interpolation of ``field`` (grid shaped) at ``points`` ``(N, P)``."""
    field = np.asarray(field, dtype=float)
    st = _stencils(points, field.shape, dx, z0, dz)
    res = np.zeros(points.shape[1])
    for offs in itertools.product(range(4), repeat=field.ndim):
        idx = []
        w = 1.0
        for (base, ws, n, periodic), o in zip(st, offs):
            j = base + o - 1
            idx.append(np.mod(j, n) if periodic else j)
            w = w * ws[o]
        res += w * field[tuple(idx)]
    return res


def rk4_paths(points, vel0, vel1, g0, g1, dx, z0, dz, T, nsub, backward):
    """Integrate ``dp/dt = v(p, t)``, ``dA/dt = g(p, t)`` over a window of length ``T``.

    Fields are linear in time between ``(vel0, g0)`` at the window start and
    ``(vel1, g1)`` at its end.  With ``backward=True`` the points are final
    positions and are traced back to the window start; ``A`` is the forward
    time integral of ``g`` along the path either way.
    """
    p = np.array(points, dtype=float, copy=True)
    nd = p.shape[0]
    A = np.zeros(p.shape[1])
    h = T / nsub
    sgn = -1.0 if backward else 1.0

    def rhs(q, s):
        v = np.stack([(1 - s) * interp(vel0[a], q, dx, z0, dz) + s * interp(vel1[a], q, dx, z0, dz)
                      for a in range(nd)])
        g = (1 - s) * interp(g0, q, dx, z0, dz) + s * interp(g1, q, dx, z0, dz)
        return sgn * v, g

    for n in range(nsub):
        s0 = (n / nsub) if not backward else 1 - n / nsub
        ds = sgn / nsub
        k1, a1 = rhs(p, s0)
        k2, a2 = rhs(p + 0.5 * h * k1, s0 + 0.5 * ds)
        k3, a3 = rhs(p + 0.5 * h * k2, s0 + 0.5 * ds)
        k4, a4 = rhs(p + h * k3, s0 + ds)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        A = A + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
    return p, A
