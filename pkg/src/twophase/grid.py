"""Two reference half-strips with a periodic tangential direction.

Field layout
------------
Scalar fields on one strip have shape ``(M_tan,) * (N - 1) + (M_nrm + 1,)``;
vector fields carry a leading axis of length ``N``.  The last axis is the
normal coordinate.  Node ``j`` of the upper strip sits at ``x_N = j dz``;
node ``j`` of the lower strip sits at ``x_N = -L_nrm + j dz``.  Both strips
therefore own an interface row: index ``0`` (upper) and ``-1`` (lower).

Tangential derivatives are spectral, normal derivatives are second-order
finite differences (one-sided at the ends).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

MAGIC = b"BPS1"


@dataclass(frozen=True)
class Grid:
    N: int = 2
    L_tan: float = 2 * np.pi
    M_tan: int = 64
    L_nrm: float = 8.0
    M_nrm: int = 64
    dt: float = 1e-3
    T_final: float = 0.1

    def __post_init__(self):
        if self.N not in (2, 3):
            raise ValueError("N must be 2 or 3")
        if self.M_tan < 8 or self.M_tan & (self.M_tan - 1):
            raise ValueError("M_tan must be a power of two >= 8")
        if self.M_nrm < 8:
            raise ValueError("M_nrm must be >= 8")
        for name in ("L_tan", "L_nrm", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.T_final < 0:
            raise ValueError("T_final must be non-negative")

    @property
    def dz(self) -> float:
        return self.L_nrm / self.M_nrm

    @property
    def dx(self) -> float:
        return self.L_tan / self.M_tan

    @property
    def tan_shape(self) -> tuple:
        return (self.M_tan,) * (self.N - 1)

    @property
    def shape(self) -> tuple:
        return self.tan_shape + (self.M_nrm + 1,)

    @property
    def full_shape(self) -> tuple:
        return self.tan_shape + (2 * self.M_nrm + 1,)

    @property
    def x_tan(self) -> np.ndarray:
        return np.arange(self.M_tan) * self.dx

    @property
    def z_upper(self) -> np.ndarray:
        return np.arange(self.M_nrm + 1) * self.dz

    @property
    def z_lower(self) -> np.ndarray:
        return -self.L_nrm + np.arange(self.M_nrm + 1) * self.dz

    @property
    def z_full(self) -> np.ndarray:
        return -self.L_nrm + np.arange(2 * self.M_nrm + 1) * self.dz

    def z(self, side: str) -> np.ndarray:
        return self.z_upper if side == "plus" else self.z_lower

    def coords(self, side: str):
        """Meshgrid of node coordinates, one array per axis (``x_1, ..., x_N``)."""
        axes = [self.x_tan] * (self.N - 1) + [self.z(side) if side != "full" else self.z_full]
        return np.meshgrid(*axes, indexing="ij")

    def tan_coords(self):
        return np.meshgrid(*([self.x_tan] * (self.N - 1)), indexing="ij")

    # -- spectral machinery ------------------------------------------------
    def wavenumbers(self, rfft: bool = True):
        """Tangential wavenumber arrays broadcastable over the mode shape."""
        n = self.N - 1
        ks = []
        for a in range(n):
            if rfft and a == n - 1:
                k = 2 * np.pi * np.fft.rfftfreq(self.M_tan, d=self.dx)
            else:
                k = 2 * np.pi * np.fft.fftfreq(self.M_tan, d=self.dx)
            shape = [1] * n
            shape[a] = k.size
            ks.append(k.reshape(shape))
        return ks

    def nyquist_mask(self, rfft: bool = True):
        """True for modes carrying a Nyquist index along any tangential axis."""
        ks = self.wavenumbers(rfft)
        kmax = np.pi / self.dx
        mask = np.zeros(np.broadcast_shapes(*[k.shape for k in ks]), dtype=bool)
        for k in ks:
            mask |= np.isclose(np.abs(k), kmax)
        return mask

    @property
    def tan_axes(self) -> tuple:
        return tuple(range(self.N - 1))

    def rfft(self, f, lead: int = 0):
        axes = tuple(lead + a for a in self.tan_axes)
        return np.fft.rfftn(f, axes=axes)

    def irfft(self, F, lead: int = 0):
        axes = tuple(lead + a for a in self.tan_axes)
        return np.fft.irfftn(F, s=self.tan_shape, axes=axes)


# -- derivative operators --------------------------------------------------

def d_tan(grid: Grid, f, axis: int, order: int = 1):
    """Spectral tangential derivative along tangential axis ``axis`` (0-based).

    Works for any array whose leading axes are the tangential axes; the
    Nyquist mode is dropped for odd orders.
    """
    f = np.asarray(f)
    n = grid.N - 1
    F = np.fft.rfftn(f, axes=tuple(range(n)))
    ks = grid.wavenumbers()
    k = ks[axis].reshape(ks[axis].shape + (1,) * (f.ndim - n))
    mult = (1j * k) ** order
    if order % 2:
        kmax = np.pi / grid.dx
        mult = np.where(np.isclose(np.abs(k), kmax), 0.0, mult)
    return np.fft.irfftn(F * mult, s=grid.tan_shape, axes=tuple(range(n)))


def d_normal(f, dz: float):
    """Second-order first derivative along the last axis."""
    f = np.asarray(f)
    out = np.empty_like(f, dtype=np.result_type(f, float))
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * dz)
    out[..., 0] = (-3 * f[..., 0] + 4 * f[..., 1] - f[..., 2]) / (2 * dz)
    out[..., -1] = (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * dz)
    return out


def d_normal2(f, dz: float):
    """Second-order second derivative along the last axis."""
    f = np.asarray(f)
    out = np.empty_like(f, dtype=np.result_type(f, float))
    out[..., 1:-1] = (f[..., 2:] - 2 * f[..., 1:-1] + f[..., :-2]) / dz**2
    out[..., 0] = (2 * f[..., 0] - 5 * f[..., 1] + 4 * f[..., 2] - f[..., 3]) / dz**2
    out[..., -1] = (2 * f[..., -1] - 5 * f[..., -2] + 4 * f[..., -3] - f[..., -4]) / dz**2
    return out


def d_normal_hi(f, dz: float):
    """Fourth-order first derivative along the last axis (diagnostics only)."""
    f = np.asarray(f)
    out = np.empty_like(f, dtype=np.result_type(f, float))
    out[..., 2:-2] = (f[..., :-4] - 8 * f[..., 1:-3] + 8 * f[..., 3:-1] - f[..., 4:]) / (12 * dz)
    c = np.array([-25, 48, -36, 16, -3]) / (12 * dz)
    c1 = np.array([-3, -10, 18, -6, 1]) / (12 * dz)
    out[..., 0] = np.tensordot(f[..., :5], c, axes=([-1], [0]))
    out[..., 1] = np.tensordot(f[..., :5], c1, axes=([-1], [0]))
    out[..., -1] = -np.tensordot(f[..., -1:-6:-1], c, axes=([-1], [0]))
    out[..., -2] = -np.tensordot(f[..., -1:-6:-1], c1, axes=([-1], [0]))
    return out


class Ops:
    """Derivative operators bound to a grid; ``d(f, a)`` is ``d/dx_{a+1}``."""

    def __init__(self, grid: Grid, high_order: bool = False):
        self.grid = grid
        self._dn = d_normal_hi if high_order else d_normal

    def d(self, f, a: int):
        if a == self.grid.N - 1:
            return self._dn(f, self.grid.dz)
        return d_tan(self.grid, f, a)

    def dn(self, f):
        return self._dn(f, self.grid.dz)

    def grad(self, f):
        return np.stack([self.d(f, a) for a in range(self.grid.N)])

    def div(self, u):
        return sum(self.d(u[a], a) for a in range(self.grid.N))

    def lap_tan(self, f):
        return sum(d_tan(self.grid, f, a, order=2) for a in range(self.grid.N - 1))


# -- transforms, traces, norms --------------------------------------------

def to_modes(grid: Grid, f):
    """Normalised DFT along the tangential axes (cos -> 1/2 at modes +-1)."""
    f = np.asarray(f)
    if f.shape[: grid.N - 1] != grid.tan_shape:
        raise ValueError(f"tangential extent {f.shape[:grid.N - 1]} does not match grid {grid.tan_shape}")
    return np.fft.fftn(f, axes=grid.tan_axes, norm="forward")


def from_modes(grid: Grid, F, real: bool = True):
    F = np.asarray(F)
    if F.shape[: grid.N - 1] != grid.tan_shape:
        raise ValueError("mode array does not match grid")
    f = np.fft.ifftn(F, axes=grid.tan_axes, norm="forward")
    return f.real if real else f


def interface_trace(f, side: str):
    """Value at ``x_N -> 0`` from the requested strip (node-centred grid)."""
    f = np.asarray(f)
    if side == "plus":
        return f[..., 0]
    if side == "minus":
        return f[..., -1]
    raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")


def jump(f_minus, f_plus):
    """``[[f]] = f_- - f_+`` at the interface."""
    return interface_trace(f_minus, "minus") - interface_trace(f_plus, "plus")


def normal_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.M_nrm + 1, grid.dz)
    w[0] = w[-1] = grid.dz / 2
    return w


def integrate(grid: Grid, f):
    """Quadrature over one strip (trapezoid in ``x_N``, rectangle tangentially)."""
    f = np.asarray(f)
    w = normal_weights(grid) if f.shape[-1] == grid.M_nrm + 1 else _full_weights(grid)
    return grid.dx ** (grid.N - 1) * float(np.sum(f * w))


def _full_weights(grid):
    w = np.full(2 * grid.M_nrm + 1, grid.dz)
    w[0] = w[-1] = grid.dz / 2
    return w


def integrate_line(grid: Grid, g):
    """Integral of an interface-line function."""
    return float(np.sum(g)) * grid.dx ** (grid.N - 1)


NORM_KINDS = ("Lq", "W1q", "W2q", "frac")


def norm(grid: Grid, f, kind: str = "Lq", q: float = 2.0, s: float = 0.5) -> float:
    """Discrete norm of a scalar strip field.

    ``frac`` is a proxy for the Besov norm ``B^s_{q,p}``: a spectral Bessel
    potential in the tangential directions plus a discrete Gagliardo
    seminorm along each normal line.
    """
    f = np.asarray(f, dtype=float)
    if kind not in NORM_KINDS:
        raise ValueError(f"unsupported norm kind {kind!r}")
    lq = lambda g: integrate(grid, np.abs(g) ** q) ** (1 / q)
    if kind == "Lq":
        return lq(f)
    ops = Ops(grid)
    if kind in ("W1q", "W2q"):
        total = integrate(grid, np.abs(f) ** q)
        first = [ops.d(f, a) for a in range(grid.N)]
        total += sum(integrate(grid, np.abs(g) ** q) for g in first)
        if kind == "W2q":
            for a in range(grid.N):
                for b in range(grid.N):
                    total += integrate(grid, np.abs(ops.d(first[a], b)) ** q)
        return total ** (1 / q)
    # fractional proxy
    ks = grid.wavenumbers()
    k2 = sum(k**2 for k in ks)
    F = grid.rfft(f)
    pot = grid.irfft(F * ((1 + k2) ** (s / 2))[..., None])
    tang = integrate(grid, np.abs(pot) ** q)
    z = np.arange(f.shape[-1]) * grid.dz
    dist = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(dist, np.inf)
    diff = np.abs(f[..., :, None] - f[..., None, :]) ** q / dist ** (1 + s * q)
    gag = np.sum(diff) * grid.dz**2 * grid.dx ** (grid.N - 1)
    return (tang + gag) ** (1 / q)


def norm_in_time(values, dt: float, p: float = 2.0) -> float:
    """``L_p``-in-time composite of per-step norms."""
    v = np.asarray(values, dtype=float)
    return float((np.sum(v**p) * dt) ** (1 / p))


# -- state -------------------------------------------------------------------

@dataclass
class State:
    """Unknowns in flattened coordinates.

    ``rho_full`` is the density on the whole column (both strips, the lower
    part carrying the extension used by the transport step); the physical
    density is its upper half, :attr:`rho_plus`.
    """

    grid: Grid
    rho_full: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    pi_minus: np.ndarray
    h: np.ndarray
    t: float = 0.0
    dh_dt: np.ndarray | None = field(default=None)

    @property
    def rho_plus(self) -> np.ndarray:
        return self.rho_full[..., self.grid.M_nrm:]

    def copy(self) -> "State":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return State(**kw)

    def replace(self, **kw) -> "State":
        return replace(self, **kw)

    def check(self):
        for name in ("rho_full", "u_plus", "u_minus", "theta_plus", "theta_minus", "pi_minus", "h"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite values in {name}")
        if np.any(self.rho_plus <= 0):
            raise FloatingPointError("non-positive density")

    def fields(self) -> dict:
        """Named strip fields for export: (side, array) pairs."""
        out = {"rho": ("plus", self.rho_plus),
               "theta_plus": ("plus", self.theta_plus),
               "theta_minus": ("minus", self.theta_minus),
               "pi_minus": ("minus", self.pi_minus)}
        for a in range(self.grid.N):
            out[f"u{a + 1}_plus"] = ("plus", self.u_plus[a])
            out[f"u{a + 1}_minus"] = ("minus", self.u_minus[a])
        return out


def equilibrium_state(grid: Grid, rho_star_plus: float, theta_star: float) -> State:
    z = np.zeros(grid.shape)
    return State(
        grid=grid,
        rho_full=np.full(grid.full_shape, rho_star_plus),
        u_plus=np.zeros((grid.N,) + grid.shape),
        u_minus=np.zeros((grid.N,) + grid.shape),
        theta_plus=np.full(grid.shape, theta_star),
        theta_minus=np.full(grid.shape, theta_star),
        pi_minus=z.copy(),
        h=np.zeros(grid.tan_shape),
        t=0.0,
        dh_dt=np.zeros(grid.tan_shape),
    )


# -- snapshot io ----------------------------------------------------------------

def write_csv(path, state: State):
    """One row per node: ``x_1..x_{N-1}, x_N, side, <field values>``."""
    g = state.grid
    plus = {k: v for k, (s, v) in state.fields().items() if s == "plus"}
    minus = {k: v for k, (s, v) in state.fields().items() if s == "minus"}
    names = sorted(set(plus) | set(minus))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{a + 1}" for a in range(g.N)] + ["side"] + names)
        for side, fields in (("minus", minus), ("plus", plus)):
            X = g.coords(side)
            flat = [x.ravel() for x in X]
            cols = [fields[n].ravel() if n in fields else None for n in names]
            for i in range(flat[0].size):
                w.writerow([repr(float(x[i])) for x in flat] + [side]
                           + ["" if c is None else repr(float(c[i])) for c in cols])


def write_binary(path, state: State):
    """Compact dump: ``b"BPS1"``, ``<4I``(N, M_tan, M_nrm, nfields), ``<3d``(L_tan, L_nrm, t),
    then per field a 32-byte NUL-padded name, one byte side (0 minus, 1 plus)
    and the little-endian float64 values in C order; finally ``h``."""
    g = state.grid
    fields = state.fields()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", g.N, g.M_tan, g.M_nrm, len(fields)))
        fh.write(struct.pack("<3d", g.L_tan, g.L_nrm, state.t))
        for name, (side, arr) in fields.items():
            fh.write(name.encode()[:32].ljust(32, b"\0"))
            fh.write(struct.pack("<B", 1 if side == "plus" else 0))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.h, dtype="<f8").tobytes())


def read_binary(path):
    """Inverse of :func:`write_binary`; returns ``(header dict, fields dict, h)``."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a BPS1 snapshot")
        N, Mt, Mn, nf = struct.unpack("<4I", fh.read(16))
        Lt, Ln, t = struct.unpack("<3d", fh.read(24))
        shape = (Mt,) * (N - 1) + (Mn + 1,)
        count = int(np.prod(shape))
        fields = {}
        for _ in range(nf):
            name = fh.read(32).rstrip(b"\0").decode()
            (side,) = struct.unpack("<B", fh.read(1))
            arr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            fields[name] = ("plus" if side else "minus", arr.copy())
        h = np.frombuffer(fh.read(8 * Mt ** (N - 1)), dtype="<f8").reshape((Mt,) * (N - 1)).copy()
    return {"N": N, "M_tan": Mt, "M_nrm": Mn, "L_tan": Lt, "L_nrm": Ln, "t": t}, fields, h
