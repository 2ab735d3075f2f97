"""Per-mode solvers for the linear Stokes-type and heat-type interface problems.

After a Fourier transform in the tangential directions each mode is a
two-point boundary value problem on the two half-lines coupled through
interface rows.  Normal derivatives use second-order differences; the
incompressible pressure lives on the half-nodes of the lower strip and is
extrapolated to the interface.  Matrices are factorised once per
``(k, lambda)`` and cached.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import MaterialSystem
from .grid import Grid

COND_LIMIT = 1e12


class SolverError(RuntimeError):
    pass


# -- Stokes -----------------------------------------------------------------------

@dataclass
class StokesData:
    """Right-hand sides of the linear Stokes interface problem.

    ``g`` stacks ``g_1..g_{N-1}`` (tangential stress), ``g_N`` (lower normal
    traction) and ``g_{N+1}`` (upper normal traction); ``h`` holds the
    velocity jumps and ``d`` the kinematic datum.
    """

    f_plus: np.ndarray
    f_minus: np.ndarray
    f_div: np.ndarray
    g: np.ndarray
    h: np.ndarray
    d: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid, dtype=float):
        N = grid.N
        z = lambda *s: np.zeros(s, dtype=dtype)  # noqa: E731
        return cls(z(N, *grid.shape), z(N, *grid.shape), z(*grid.shape),
                   z(N + 1, *grid.tan_shape), z(N - 1, *grid.tan_shape), z(*grid.tan_shape))


@dataclass
class StokesSolution:
    u_plus: np.ndarray
    u_minus: np.ndarray
    pi_minus: np.ndarray        # node values on the lower strip
    pi_half: np.ndarray         # half-node unknowns
    H: np.ndarray
    residual: float             # max relative algebraic residual over modes
    mode_residuals: np.ndarray = field(repr=False, default=None)


class _Layout:
    """Unknown numbering of one Stokes mode block."""

    def __init__(self, N: int, M: int):
        self.N, self.M, self.n = N, M, M + 1
        self.size = 2 * N * self.n + M + 1

    def up(self, a, j):
        return a * self.n + j

    def um(self, a, j):
        return (self.N + a) * self.n + j

    def p(self, j):
        return 2 * self.N * self.n + j

    @property
    def H(self):
        return self.size - 1


def _d1_end(dz, at_start: bool):
    """Second-order one-sided first-derivative weights at a strip end."""
    w = np.array([-3.0, 4.0, -1.0]) / (2 * dz)
    return w if at_start else -w


class StokesSolver:
    """Factorised per-mode Stokes interface operators for one material and grid."""

    def __init__(self, material: MaterialSystem, grid: Grid):
        self.material = material
        self.grid = grid
        self.layout = _Layout(grid.N, grid.M_nrm)
        st = material.starred
        self.mu_p, self.lam_p, self.mu_m = st["mu_plus"], st["lambda_plus"], st["mu_minus"]
        self.rho_p, self.rho_m = material.rho_star_plus, material.rho_star_minus
        self._cache = {}

    # assembly ------------------------------------------------------------
    def matrix(self, kvec, lam) -> sp.csc_matrix:
        L = self.layout
        N, M, dz = L.N, L.M, self.grid.dz
        kvec = np.asarray(kvec, dtype=float).reshape(N - 1)
        k2 = float(np.sum(kvec**2))
        ik = 1j * kvec
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        jj = np.arange(1, M)
        for side in ("plus", "minus"):
            idx = L.up if side == "plus" else L.um
            rho = self.rho_p if side == "plus" else self.rho_m
            mu = self.mu_p if side == "plus" else self.mu_m
            c = (self.lam_p - mu / 2) if side == "plus" else mu / 2
            for a in range(N):
                r = idx(a, jj)
                # rho lam u - mu/2 (D2 - k^2) u
                add(r, idx(a, jj), np.full(jj.size, rho * lam + mu / 2 * (2 / dz**2 + k2), complex))
                add(r, idx(a, jj - 1), np.full(jj.size, -mu / 2 / dz**2, complex))
                add(r, idx(a, jj + 1), np.full(jj.size, -mu / 2 / dz**2, complex))
                # -c d_a(div u)
                if a < N - 1:
                    for b in range(N - 1):
                        add(r, idx(b, jj), np.full(jj.size, c * kvec[a] * kvec[b], complex))
                    add(r, idx(N - 1, jj + 1), np.full(jj.size, -c * ik[a] / (2 * dz)))
                    add(r, idx(N - 1, jj - 1), np.full(jj.size, c * ik[a] / (2 * dz)))
                else:
                    for b in range(N - 1):
                        add(r, idx(b, jj + 1), np.full(jj.size, -c * ik[b] / (2 * dz)))
                        add(r, idx(b, jj - 1), np.full(jj.size, c * ik[b] / (2 * dz)))
                    add(r, idx(N - 1, jj), np.full(jj.size, c * 2 / dz**2, complex))
                    add(r, idx(N - 1, jj - 1), np.full(jj.size, -c / dz**2, complex))
                    add(r, idx(N - 1, jj + 1), np.full(jj.size, -c / dz**2, complex))
                if side == "minus":
                    if a < N - 1:
                        add(r, L.p(jj - 1), np.full(jj.size, ik[a] / 2))
                        add(r, L.p(jj), np.full(jj.size, ik[a] / 2))
                    else:
                        add(r, L.p(jj), np.full(jj.size, 1 / dz, complex))
                        add(r, L.p(jj - 1), np.full(jj.size, -1 / dz, complex))
            # outer Dirichlet
            j_out = M if side == "plus" else 0
            for a in range(N):
                add(np.array([idx(a, j_out)]), np.array([idx(a, j_out)]), np.array([1.0 + 0j]))

        # divergence at the lower half-nodes
        jh = np.arange(M)
        for b in range(N - 1):
            add(L.p(jh), L.um(b, jh), np.full(M, ik[b] / 2))
            add(L.p(jh), L.um(b, jh + 1), np.full(M, ik[b] / 2))
        add(L.p(jh), L.um(N - 1, jh + 1), np.full(M, 1 / dz, complex))
        add(L.p(jh), L.um(N - 1, jh), np.full(M, -1 / dz, complex))

        wp = _d1_end(dz, True)           # upper strip, nodes 0, 1, 2
        wm = _d1_end(dz, False)          # lower strip, nodes M, M-1, M-2
        up_nodes = np.arange(3)
        um_nodes = M - np.arange(3)
        sig_p = self.material.sigma_plus
        sig_m = self.material.sigma_minus
        dr = self.rho_m - self.rho_p

        def single(r, c, v):
            add(np.array([r]), np.array([c]), np.array([complex(v)]))

        for i in range(N - 1):
            r = L.up(i, 0)
            # mu_- D_iN(u_-) - mu_+ D_iN(u_+)
            single(r, L.um(N - 1, M), self.mu_m / 2 * ik[i])
            for w, j in zip(wm, um_nodes):
                single(r, L.um(i, j), self.mu_m / 2 * w)
            single(r, L.up(N - 1, 0), -self.mu_p / 2 * ik[i])
            for w, j in zip(wp, up_nodes):
                single(r, L.up(i, j), -self.mu_p / 2 * w)
            # velocity jump
            r = L.um(i, M)
            single(r, L.um(i, M), 1.0)
            single(r, L.up(i, 0), -1.0)

        # upper normal traction
        r = L.up(N - 1, 0)
        for w, j in zip(wp, up_nodes):
            single(r, L.up(N - 1, j), self.lam_p * w)
        for b in range(N - 1):
            single(r, L.up(b, 0), (self.lam_p - self.mu_p) * ik[b])
        single(r, L.H, sig_p * k2)
        # lower normal traction
        r = L.um(N - 1, M)
        for w, j in zip(wm, um_nodes):
            single(r, L.um(N - 1, j), self.mu_m * w)
        single(r, L.p(M - 1), -1.5)
        single(r, L.p(M - 2), 0.5)
        single(r, L.H, sig_m * k2)
        # kinematic row
        single(L.H, L.H, lam)
        single(L.H, L.um(N - 1, M), -self.rho_m / dr)
        single(L.H, L.up(N - 1, 0), self.rho_p / dr)

        rows = np.concatenate([np.atleast_1d(r) for r in rows])
        cols = np.concatenate([np.atleast_1d(c) for c in cols])
        vals = np.concatenate([np.atleast_1d(v) for v in vals]).astype(complex)
        return sp.csc_matrix((vals, (rows, cols)), shape=(L.size, L.size))

    def rhs_vector(self, fp, fm, fdiv, g, h, d):
        """Stack one mode's data (``fp``, ``fm`` shaped ``(N, M+1)``) into a vector."""
        L = self.layout
        N, M = L.N, L.M
        b = np.zeros(L.size, dtype=complex)
        for a in range(N):
            b[L.up(a, 1):L.up(a, M)] = fp[a, 1:M]
            b[L.um(a, 1):L.um(a, M)] = fm[a, 1:M]
        b[L.p(0):L.p(M)] = 0.5 * (fdiv[:-1] + fdiv[1:])
        for i in range(N - 1):
            b[L.up(i, 0)] = g[i]
            b[L.um(i, M)] = h[i]
        b[L.um(N - 1, M)] = g[N - 1]
        b[L.up(N - 1, 0)] = g[N]
        b[L.H] = d
        return b

    def factor(self, kvec, lam):
        key = (tuple(np.round(np.asarray(kvec, dtype=float).ravel(), 12)), complex(lam))
        lu = self._cache.get(key)
        if lu is None:
            A = self.matrix(kvec, lam)
            try:
                lu = spla.splu(A)
            except RuntimeError as exc:
                raise SolverError(f"singular Stokes mode block at k={kvec}, lambda={lam}") from exc
            self._cache[key] = (A, lu)
            return A, lu
        return lu

    def solve_mode(self, kvec, lam, b):
        A, lu = self.factor(kvec, lam)
        x = lu.solve(b)
        nb = np.linalg.norm(b)
        res = np.linalg.norm(A @ x - b) / nb if nb > 0 else float(np.linalg.norm(A @ x))
        return x, res

    def condition_number(self, kvec, lam) -> float:
        A = self.matrix(kvec, lam).toarray()
        A = A / np.max(np.abs(A), axis=1, keepdims=True)
        return float(np.linalg.cond(A))

    # field-level solve ------------------------------------------------------
    def unpack(self, x):
        L = self.layout
        N, M = L.N, L.M
        up = np.stack([x[L.up(a, 0):L.up(a, 0) + L.n] for a in range(N)])
        um = np.stack([x[L.um(a, 0):L.um(a, 0) + L.n] for a in range(N)])
        ph = x[L.p(0):L.p(M)]
        return up, um, ph, x[L.H]

    def solve(self, lam, data: StokesData, real: bool | None = None) -> StokesSolution:
        """Solve the resolvent problem with spectral parameter ``lam`` for gridded data."""
        g = self.grid
        N, M = g.N, g.M_nrm
        if real is None:
            real = np.isreal(lam) and all(np.isrealobj(a) for a in
                                          (data.f_plus, data.f_minus, data.f_div, data.g, data.h, data.d))
        lam = complex(lam)
        if real:
            fwd = lambda f, lead: g.rfft(f, lead=lead)  # noqa: E731
            ks = g.wavenumbers(rfft=True)
        else:
            fwd = lambda f, lead: np.fft.fftn(f, axes=tuple(lead + a for a in g.tan_axes))  # noqa: E731
            ks = g.wavenumbers(rfft=False)
        nyq = g.nyquist_mask(rfft=real)
        move = lambda F, lead: np.moveaxis(F, tuple(range(lead, lead + N - 1)), tuple(range(N - 1)))  # noqa: E731
        Fp = move(fwd(data.f_plus, 1), 1)
        Fm = move(fwd(data.f_minus, 1), 1)
        Fd = fwd(data.f_div, 0)
        Gg = move(fwd(data.g, 1), 1)
        Hh = move(fwd(data.h, 1), 1) if N > 1 else None
        Dd = fwd(data.d, 0)
        mode_shape = Fd.shape[: N - 1]
        Up = np.zeros(mode_shape + (N, M + 1), dtype=complex)
        Um = np.zeros_like(Up)
        Ph = np.zeros(mode_shape + (M,), dtype=complex)
        Hm = np.zeros(mode_shape, dtype=complex)
        res = np.zeros(mode_shape)
        kgrid = np.stack(np.broadcast_arrays(*ks), axis=-1)
        for idx in np.ndindex(*mode_shape):
            if nyq[idx]:
                continue
            b = self.rhs_vector(Fp[idx], Fm[idx], Fd[idx], Gg[idx], Hh[idx], Dd[idx])
            if not np.any(b):
                continue
            x, r = self.solve_mode(kgrid[idx], lam, b)
            res[idx] = r
            Up[idx], Um[idx], Ph[idx], Hm[idx] = self.unpack(x)
        back = lambda F: _inverse(g, F, real)  # noqa: E731
        u_plus = np.stack([back(Up[..., a, :]) for a in range(N)])
        u_minus = np.stack([back(Um[..., a, :]) for a in range(N)])
        pi_half = back(Ph)
        H = back(Hm)
        return StokesSolution(u_plus, u_minus, pressure_to_nodes(pi_half), pi_half, H,
                              float(np.max(res)) if res.size else 0.0, res)

    def time_step(self, u_plus, u_minus, H, data: StokesData, dt: float) -> StokesSolution:
        """Implicit Euler step: resolvent solve at ``1/dt`` with the old level as data."""
        shifted = StokesData(data.f_plus + self.rho_p * u_plus / dt,
                             data.f_minus + self.rho_m * u_minus / dt,
                             data.f_div, data.g, data.h, data.d + H / dt)
        return self.solve(1.0 / dt, shifted, real=True)


def _inverse(grid: Grid, F, real: bool):
    """Inverse tangential transform for arrays whose leading axes are modes."""
    nd = grid.N - 1
    if real:
        return np.fft.irfftn(F, s=grid.tan_shape, axes=tuple(range(nd)))
    return np.fft.ifftn(F, axes=tuple(range(nd)))


def pressure_to_nodes(pi_half):
    """Half-node pressure to node values; ends use the same extrapolation as the interface row."""
    p = np.asarray(pi_half)
    out = np.empty(p.shape[:-1] + (p.shape[-1] + 1,), dtype=p.dtype)
    out[..., 1:-1] = 0.5 * (p[..., 1:] + p[..., :-1])
    out[..., 0] = 1.5 * p[..., 0] - 0.5 * p[..., 1]
    out[..., -1] = 1.5 * p[..., -1] - 0.5 * p[..., -2]
    return out


def solve_stokes_resolvent(material: MaterialSystem, grid: Grid, lam, data: StokesData,
                           solver: StokesSolver | None = None) -> StokesSolution:
    solver = solver or StokesSolver(material, grid)
    return solver.solve(lam, data)


def stokes_time_step(material: MaterialSystem, grid: Grid, u_plus, u_minus, H, data: StokesData,
                     dt: float, solver: StokesSolver | None = None) -> StokesSolution:
    solver = solver or StokesSolver(material, grid)
    return solver.time_step(u_plus, u_minus, H, data, dt)


# -- resolvent sweep ------------------------------------------------------------------

@dataclass
class SweepRecord:
    k: float
    lam: complex
    condition: float
    residual: float


def resolvent_sweep(material: MaterialSystem, grid: Grid, lambda0: float = 1.0, eps: float = 0.1,
                    decades: float = 3.0, n_mag: int = 7, angles=None, modes=None,
                    seed: int = 0) -> list[SweepRecord]:
    """Condition numbers of mode blocks over a sector ``|arg lam| <= pi - eps``."""
    solver = StokesSolver(material, grid)
    ks = grid.wavenumbers(rfft=True)
    k_line = np.ravel(ks[-1])
    if modes is None:
        modes = [i for i in range(k_line.size) if not np.isclose(abs(k_line[i]), np.pi / grid.dx)]
    angles = (0.0, np.pi - eps, -(np.pi - eps)) if angles is None else angles
    mags = lambda0 * np.logspace(0, decades, n_mag)
    rng = np.random.default_rng(seed)
    out = []
    for i in modes:
        kvec = np.zeros(grid.N - 1)
        kvec[-1] = k_line[i]
        for phi in angles:
            for r in mags:
                lam = r * np.exp(1j * phi)
                cond = solver.condition_number(kvec, lam)
                b = rng.standard_normal(solver.layout.size) + 1j * rng.standard_normal(solver.layout.size)
                _, res = solver.solve_mode(kvec, lam, b)
                out.append(SweepRecord(float(k_line[i]), complex(lam), cond, res))
    return out


def write_sweep_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "lambda_re", "lambda_im", "abs_lambda", "arg_lambda", "condition", "residual"])
        for r in records:
            w.writerow([r.k, r.lam.real, r.lam.imag, abs(r.lam), np.angle(r.lam), r.condition, r.residual])


# -- heat -----------------------------------------------------------------------------

@dataclass
class HeatSolution:
    theta_plus: np.ndarray     # perturbation from the reference temperature
    theta_minus: np.ndarray
    residual: float
    flux_row_residual: float


class HeatSolver:
    """Per-mode tridiagonal solver on the full column with a shared interface node."""

    def __init__(self, material: MaterialSystem, grid: Grid):
        st = material.starred
        self.grid = grid
        self.c_p = material.rho_star_plus * st["kappa_plus"]
        self.c_m = material.rho_star_minus * st["kappa_minus"]
        self.d_p, self.d_m = st["d_plus"], st["d_minus"]

    def bands(self, k2: float, lam):
        """``(3, 2M+1)`` banded matrix in ``scipy.linalg.solve_banded`` layout."""
        M, dz = self.grid.M_nrm, self.grid.dz
        n = 2 * M + 1
        ab = np.zeros((3, n), dtype=complex)
        c = np.where(np.arange(n) < M, self.c_m, self.c_p).astype(complex)
        d = np.where(np.arange(n) < M, self.d_m, self.d_p).astype(float)
        diag = c * lam + d * (2 / dz**2 + k2)
        ab[1] = diag
        ab[0, 1:] = -d[:-1] / dz**2          # super-diagonal (row i, col i+1)
        ab[2, :-1] = -d[1:] / dz**2          # sub-diagonal (row i+1, col i)
        # interface flux row (half-cell balance)
        dm, dp = self.d_m, self.d_p
        ab[1, M] = (dm + dp) / dz + dz / 2 * ((self.c_m + self.c_p) * lam + (dm + dp) * k2)
        ab[0, M + 1] = -dp / dz
        ab[2, M - 1] = -dm / dz
        # outer Dirichlet rows
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
        return ab

    def rhs(self, f_minus, f_plus, g):
        M, dz = self.grid.M_nrm, self.grid.dz
        b = np.concatenate([f_minus[..., :-1], f_plus], axis=-1).astype(complex)
        b[..., M] = g + dz / 2 * (f_minus[..., -1] + f_plus[..., 0])
        b[..., 0] = 0.0
        b[..., -1] = 0.0
        return b

    def solve(self, lam, f_minus, f_plus, g) -> HeatSolution:
        """Resolvent solve for gridded data (perturbation variables)."""
        grid = self.grid
        M = grid.M_nrm
        real = np.isreal(lam) and np.isrealobj(f_minus) and np.isrealobj(f_plus) and np.isrealobj(g)
        if real:
            B = self.rhs(grid.rfft(f_minus), grid.rfft(f_plus), grid.rfft(g))
            ks = grid.wavenumbers(rfft=True)
        else:
            ax = grid.tan_axes
            B = self.rhs(np.fft.fftn(f_minus, axes=ax), np.fft.fftn(f_plus, axes=ax),
                         np.fft.fftn(g, axes=ax))
            ks = grid.wavenumbers(rfft=False)
        k2 = sum(k**2 for k in ks)
        k2 = np.broadcast_to(k2, B.shape[:-1])
        nyq = grid.nyquist_mask(rfft=real)
        X = np.zeros_like(B)
        res = 0.0
        flux_res = 0.0
        for idx in np.ndindex(*B.shape[:-1]):
            if nyq[idx] or not np.any(B[idx]):
                continue
            ab = self.bands(float(k2[idx]), complex(lam))
            x = scipy.linalg.solve_banded((1, 1), ab, B[idx])
            r = _banded_matvec(ab, x) - B[idx]
            nb = np.max(np.abs(B[idx]))
            res = max(res, float(np.max(np.abs(r)) / nb))
            flux_res = max(flux_res, float(abs(r[M]) / nb))
            X[idx] = x
        full = _inverse(grid, X, real)
        return HeatSolution(full[..., M:], full[..., : M + 1], res, flux_res)

    def time_step(self, theta_minus, theta_plus, f_minus, f_plus, g, dt: float) -> HeatSolution:
        """Implicit Euler step for perturbation temperatures."""
        return self.solve(1.0 / dt, f_minus + self.c_m * theta_minus / dt,
                          f_plus + self.c_p * theta_plus / dt, g)


def _banded_matvec(ab, x):
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[2, :-1] * x[:-1]
    return y


def solve_heat_resolvent(material: MaterialSystem, grid: Grid, lam, f_minus, f_plus, g):
    return HeatSolver(material, grid).solve(lam, f_minus, f_plus, g)


def solve_heat_step(material: MaterialSystem, grid: Grid, theta_minus, theta_plus,
                    f_minus, f_plus, g, dt: float, solver: HeatSolver | None = None):
    solver = solver or HeatSolver(material, grid)
    return solver.time_step(theta_minus, theta_plus, f_minus, f_plus, g, dt)
