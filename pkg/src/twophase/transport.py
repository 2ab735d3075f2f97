"""Density transport on the compressible side along characteristics.

The upper-strip velocity is extended to the whole column by a reflection
formula that is C^1 across ``x_N = 0``; characteristics of the resulting
field carry the density, which is multiplied by the exponential of the
accumulated compression rate.  Each step is the restriction of the
closed-form solution to one time window, so composing steps reproduces
the whole-interval formula.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import ExtendedHeight
from .grid import Grid, Ops


class TransportError(RuntimeError):
    pass


def lions_extend(grid: Grid, f):
    """Extend an upper-strip field to the full column.

    Below the interface the value is ``3 f(-x_N) - 2 f(-2 x_N)``.  Both
    reflected points are grid nodes; points beyond the strip take the value
    of the deepest node.  Leading axes (components) are carried along.
    """
    f = np.asarray(f, dtype=float)
    M = grid.M_nrm
    j = np.arange(M)                     # lower nodes strictly below 0
    i1 = M - j                           # node of -x_N
    i2 = np.minimum(2 * (M - j), M)      # node of -2 x_N, clamped
    lower = 3 * f[..., i1] - 2 * f[..., i2]
    return np.concatenate([lower, f], axis=-1)


def _full_ops(grid: Grid):
    return Ops(grid)


def transport_velocity(grid: Grid, u_plus, eh: ExtendedHeight):
    """Extended velocity ``w``, characteristic velocity ``v`` and compression rate.

    ``v = (w', w_N - K_0 - sum_j K_j w_j)`` and the rate is
    ``div w - sum_j K_j d_N w_j``, all on the full column.
    """
    N = grid.N
    w = lions_extend(grid, u_plus)
    K = [eh.full("K", j) for j in range(N)]
    K0 = eh.full("K0")
    ops = _full_ops(grid)
    v = w.copy()
    v[-1] = w[-1] - K0 - sum(K[j] * w[j] for j in range(N))
    rate = ops.div(w) - sum(K[j] * ops.dn(w[j]) for j in range(N))
    return w, v, rate


def max_velocity_gradient(grid: Grid, v) -> float:
    ops = _full_ops(grid)
    return float(max(np.max(np.abs(ops.d(v[a], b))) for a in range(grid.N) for b in range(grid.N)))


@dataclass
class FlowMap:
    """Characteristic maps over one window ``[t0, t0 + T]``.

    ``forward`` holds the end positions of paths started at the nodes,
    ``backward`` the start positions of paths ending at the nodes and
    ``A`` the compression rate integrated along the backward paths.
    """

    grid: Grid
    T: float
    forward: np.ndarray
    backward: np.ndarray
    A: np.ndarray
    grad_integral: float
    min_jacobian: float

    def round_trip_error(self, vel0, vel1, rate0, rate1, nsub: int = 4) -> float:
        g = self.grid
        pts = self.forward.reshape(g.N, -1)
        back, _ = kernels.rk4_paths(pts, vel0, vel1, rate0, rate1, g.dx, -g.L_nrm, g.dz,
                                    self.T, nsub, True)
        nodes = _nodes(g).reshape(g.N, -1)
        return float(np.max(np.abs(back - nodes)))


def _nodes(grid: Grid):
    return np.stack(grid.coords("full"))


def _jacobian_min(grid: Grid, pos):
    """Minimum determinant of the discrete Jacobian of a position map."""
    N = grid.N
    disp = pos - _nodes(grid)
    J = np.empty((N, N) + pos.shape[1:])
    for a in range(N):
        for b in range(N):
            if b < N - 1:
                d = (np.roll(disp[a], -1, axis=b) - np.roll(disp[a], 1, axis=b)) / (2 * grid.dx)
            else:
                d = np.gradient(disp[a], grid.dz, axis=-1)
            J[a, b] = d + (1.0 if a == b else 0.0)
    Jm = np.moveaxis(J.reshape(N, N, -1), -1, 0)
    return float(np.min(np.linalg.det(Jm)))


def advect_flow(grid: Grid, vel0, vel1, rate0, rate1, T: float, nsub: int = 4,
                grad_budget: float = 0.0, eps1: float = 0.1,
                min_jacobian: float = 0.5) -> FlowMap:
    """Trace characteristics of a field linear in time over a window of length ``T``.

    ``grad_budget`` is the integral of the velocity-gradient sup norm
    already spent before this window; the window's own contribution is the
    trapezoidal rule on its end levels.  The smallness gate and the
    bijectivity monitor raise :class:`TransportError` when violated.
    """
    spent = grad_budget + 0.5 * T * (max_velocity_gradient(grid, vel0)
                                     + max_velocity_gradient(grid, vel1))
    if spent > eps1:
        raise TransportError(f"velocity-gradient integral {spent:.3g} exceeds eps1 = {eps1}")
    nodes = _nodes(grid)
    flat = nodes.reshape(grid.N, -1)
    args = (vel0, vel1, rate0, rate1, grid.dx, -grid.L_nrm, grid.dz, T, nsub)
    fwd, _ = kernels.rk4_paths(flat, *args, False)
    bwd, A = kernels.rk4_paths(flat, *args, True)
    fwd = fwd.reshape(nodes.shape)
    jmin = _jacobian_min(grid, fwd)
    if jmin <= min_jacobian:
        raise TransportError(f"flow map Jacobian {jmin:.3g} below {min_jacobian}")
    return FlowMap(grid, T, fwd, bwd.reshape(nodes.shape), A.reshape(grid.full_shape),
                   spent, jmin)


def density_update(grid: Grid, rho_full, flow: FlowMap):
    """``rho(xi) = rho_prev(eta(xi)) * exp(-A)`` on the full column."""
    pts = flow.backward.reshape(grid.N, -1)
    prev = kernels.interp(np.asarray(rho_full, dtype=float), pts, grid.dx, -grid.L_nrm, grid.dz)
    rho = prev.reshape(grid.full_shape) * np.exp(-flow.A)
    if np.any(rho[..., grid.M_nrm:] <= 0):
        raise TransportError("non-positive density after transport")
    return rho


def initial_density(grid: Grid, rho_star_plus: float, rho0_perturbation):
    """Full-column density ``rho*_+ + Ext[rho_0]`` from an upper-strip perturbation."""
    rho = rho_star_plus + lions_extend(grid, rho0_perturbation)
    if np.any(rho <= 0):
        raise TransportError("initial density must be positive")
    return rho


def rk4_trace(velocity, points, t0: float, t1: float, nsteps: int):
    """Classical RK4 for ``dp/dt = velocity(p, t)`` with a callable field.

    Reference integrator for analytic flows; ``points`` is ``(N, P)``.
    """
    p = np.array(points, dtype=float, copy=True)
    h = (t1 - t0) / nsteps
    t = t0
    for _ in range(nsteps):
        k1 = velocity(p, t)
        k2 = velocity(p + 0.5 * h * k1, t + 0.5 * h)
        k3 = velocity(p + 0.5 * h * k2, t + 0.5 * h)
        k4 = velocity(p + h * k3, t + h)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return p
