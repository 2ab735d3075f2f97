"""Height extension, flattening transform and its derived coefficients.

The interface ``x_N = h(x', t)`` is flattened by ``y_N = x_N + H(x, t)``
where ``H`` solves ``(1 - Delta) H = 0`` on each half-space with trace
``h``.  Per tangential mode this is ``H_k(x_N) = h_k exp(-omega_k |x_N|)``
with ``omega_k = sqrt(1 + |k|^2)``, so normal derivatives are analytic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, Ops

SIDES = ("plus", "minus")


@dataclass
class ExtendedHeight:
    grid: Grid
    h: np.ndarray
    H: dict          # side -> H
    dH: dict         # side -> (N, ...) spatial derivatives H_1..H_N
    H_nn: dict       # side -> analytic d^2H/dx_N^2
    H0: dict         # side -> dH/dt
    K: dict          # side -> (N, ...) K_j = H_j / (1 + H_N)
    K0: dict         # side -> H_0 / (1 + H_N)

    @property
    def gate(self) -> float:
        return float(min(np.min(1 + self.dH[s][-1]) for s in SIDES))

    def Q(self, side):
        """``nabla f = Q nabla f_hat`` at every node, shape ``(N, N, ...)``."""
        N = self.grid.N
        J = 1 + self.dH[side][-1]
        Q = np.zeros((N, N) + J.shape)
        for a in range(N - 1):
            Q[a, a] = 1.0
            Q[a, N - 1] = -self.K[side][a]
        Q[N - 1, N - 1] = 1.0 / J
        return Q

    def Q1(self, side):
        N = self.grid.N
        Q1 = np.zeros((N, N) + self.H[side].shape)
        for a in range(N - 1):
            Q1[a, N - 1] = self.dH[side][a]
        Q1[N - 1, N - 1] = self.dH[side][-1]
        return Q1

    def Q_inv(self, side):
        N = self.grid.N
        return np.eye(N).reshape((N, N) + (1,) * self.H[side].ndim) + self.Q1(side)

    def full(self, name: str, index=None):
        """Stitch a per-side quantity onto the whole column (lower then upper)."""
        d = getattr(self, name)
        lo, up = d["minus"], d["plus"]
        if index is not None:
            lo, up = lo[index], up[index]
        return np.concatenate([lo[..., :-1], up], axis=-1)


def _extend_modes(grid: Grid, h):
    """Mode coefficients of ``h`` and the decay rates ``omega_k``."""
    ks = grid.wavenumbers()
    k2 = sum(k**2 for k in ks)
    return grid.rfft(h), np.sqrt(1 + k2), ks


def extend_height(grid: Grid, h, dh_dt=None) -> ExtendedHeight:
    """Build ``H`` and every derived coefficient from the interface height."""
    h = np.asarray(h, dtype=float)
    hk, omega, ks = _extend_modes(grid, h)
    nyq = grid.nyquist_mask()
    H, dH, Hnn, H0, K, K0 = {}, {}, {}, {}, {}, {}
    h0k = None if dh_dt is None else grid.rfft(np.asarray(dh_dt, dtype=float))
    for side in SIDES:
        z = grid.z(side)
        decay = np.exp(-omega[..., None] * np.abs(z))
        sgn = -1.0 if side == "plus" else 1.0
        Hk = hk[..., None] * decay
        H[side] = grid.irfft(Hk)
        ders = []
        for a in range(grid.N - 1):
            mult = np.where(nyq, 0.0, 1j * ks[a])[..., None]
            ders.append(grid.irfft(mult * Hk))
        ders.append(grid.irfft(sgn * omega[..., None] * Hk))
        dH[side] = np.stack(ders)
        Hnn[side] = grid.irfft(omega[..., None] ** 2 * Hk)
        H0[side] = (np.zeros_like(H[side]) if h0k is None
                    else grid.irfft(h0k[..., None] * decay))
        J = 1 + dH[side][-1]
        K[side] = dH[side] / J
        K0[side] = H0[side] / J
    return ExtendedHeight(grid, h, H, dH, Hnn, H0, K, K0)


def transform_gate(eh: ExtendedHeight, threshold: float = 0.5) -> bool:
    return eh.gate >= threshold


def helmholtz_residual(eh: ExtendedHeight, side: str) -> float:
    """Max of ``|(1 - Delta) H|`` with spectral tangential and analytic normal parts."""
    from .grid import d_tan

    g = eh.grid
    lap = eh.H_nn[side] + sum(d_tan(g, eh.H[side], a, order=2) for a in range(g.N - 1))
    return float(np.max(np.abs(eh.H[side] - lap)))


def surface_gradient(grid: Grid, h):
    from .grid import d_tan

    return np.stack([d_tan(grid, h, a) for a in range(grid.N - 1)])


def mean_curvature(grid: Grid, h, variant: str = "printed"):
    """Curvature term of the flattened interface.

    ``printed``: ``div'(grad'h / (1 + |grad'h|^2))``;
    ``classical``: ``div'(grad'h / sqrt(1 + |grad'h|^2))``.
    Both reduce to ``Delta'h`` at linear order.
    """
    from .grid import d_tan

    gh = surface_gradient(grid, h)
    g2 = np.sum(gh**2, axis=0)
    if variant == "printed":
        denom = 1 + g2
    elif variant == "classical":
        denom = np.sqrt(1 + g2)
    else:
        raise ValueError(f"unknown curvature variant {variant!r}")
    return sum(d_tan(grid, gh[a] / denom, a) for a in range(grid.N - 1))


def normal_and_curvature(grid: Grid, h, variant: str = "printed"):
    """Unit normal ``(-grad'h, 1)/sqrt(1+|grad'h|^2)`` (shape ``(N, ...)``) and curvature."""
    gh = surface_gradient(grid, h)
    S = np.sqrt(1 + np.sum(gh**2, axis=0))
    n = np.concatenate([-gh, np.ones((1,) + S.shape)]) / S
    return n, mean_curvature(grid, h, variant)


# -- pulled-back differential operators ------------------------------------------

def chain_rule_pullback(ops: Ops, f_hat, eh: ExtendedHeight, side: str, f_t=None):
    """Physical derivatives of ``f`` expressed through ``f_hat`` on one strip.

    Returns ``(grad, dt)`` where ``grad[a] = d_a f_hat - K_a d_N f_hat`` and
    ``dt = d_t f_hat - K_0 d_N f_hat`` (``None`` unless ``f_t`` is given).
    """
    dn = ops.dn(f_hat)
    K = eh.K[side]
    grad = np.stack([ops.d(f_hat, a) - K[a] * dn for a in range(ops.grid.N)])
    dt = None if f_t is None else f_t - eh.K0[side] * dn
    return grad, dt


def v_div(ops: Ops, u, eh: ExtendedHeight, side: str):
    """``V_div(u, H) = -sum_j K_j d_N u_j``."""
    K = eh.K[side]
    return -sum(K[j] * ops.dn(u[j]) for j in range(ops.grid.N))


def f_minus(ops: Ops, u, eh: ExtendedHeight, side: str):
    """Divergence defect ``sum_{j<N} (H_j d_N u_j - H_N d_j u_j)``.

    With this sign ``div u_phys = (div u_hat - f) / (1 + H_N)`` and
    ``f = div ff``.
    """
    dH = eh.dH[side]
    N = ops.grid.N
    return sum(dH[j] * ops.dn(u[j]) - dH[-1] * ops.d(u[j], j) for j in range(N - 1))


def ff_minus(u, eh: ExtendedHeight, side: str):
    """``-(H_N u_1, ..., H_N u_{N-1}, -sum_{j<N} H_j u_j)``."""
    dH = eh.dH[side]
    N = u.shape[0]
    comps = [-dH[-1] * u[j] for j in range(N - 1)]
    comps.append(sum(dH[j] * u[j] for j in range(N - 1)))
    return np.stack(comps)


@dataclass
class DivergenceForms:
    V_div: np.ndarray
    f_minus: np.ndarray
    ff_minus: np.ndarray
    form_direct: np.ndarray
    form_f: np.ndarray
    form_ff: np.ndarray

    @property
    def max_disagreement(self) -> float:
        return float(max(np.max(np.abs(self.form_direct - self.form_f)),
                         np.max(np.abs(self.form_direct - self.form_ff))))


def divergence_transforms(ops: Ops, u, eh: ExtendedHeight, side: str) -> DivergenceForms:
    div = ops.div(u)
    V = v_div(ops, u, eh, side)
    f = f_minus(ops, u, eh, side)
    ff = ff_minus(u, eh, side)
    J = 1 + eh.dH[side][-1]
    return DivergenceForms(V, f, ff, div + V, (div - f) / J, (div - ops.div(ff)) / J)


def strain(ops: Ops, u):
    """``D(u) = (grad u + grad u^T) / 2`` with shape ``(N, N, ...)``."""
    N = ops.grid.N
    G = [[ops.d(u[i], j) for j in range(N)] for i in range(N)]
    return np.stack([np.stack([0.5 * (G[i][j] + G[j][i]) for j in range(N)]) for i in range(N)])


def v_strain(ops: Ops, u, eh: ExtendedHeight, side: str):
    """Correction with ``D(u_phys) = D(u_hat) + V_D``: ``-(K_i d_N u_j + K_j d_N u_i) / 2``."""
    N = ops.grid.N
    K = eh.K[side]
    dn = [ops.dn(u[j]) for j in range(N)]
    return np.stack([np.stack([-0.5 * (K[i] * dn[j] + K[j] * dn[i]) for j in range(N)])
                     for i in range(N)])


def tensor_div(ops: Ops, G):
    """Row-wise divergence ``(Div G)_i = sum_j d_j G_ij``."""
    N = ops.grid.N
    return np.stack([sum(ops.d(G[i, j], j) for j in range(N)) for i in range(N)])


def v_tensor_div(ops: Ops, G, eh: ExtendedHeight, side: str):
    """``V_Div(G)_i = V_div(row i of G)``."""
    N = ops.grid.N
    return np.stack([v_div(ops, G[i], eh, side) for i in range(N)])


def strain_transforms(ops: Ops, u, eh: ExtendedHeight, side: str):
    return v_strain(ops, u, eh, side), lambda G: v_tensor_div(ops, G, eh, side)
