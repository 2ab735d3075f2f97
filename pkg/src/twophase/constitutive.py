"""Material constants, constitutive closures and thermodynamic checks.

A :class:`MaterialSystem` bundles the equilibrium constants of the two
phases with evaluable closures.  The ``+`` phase (upper, compressible)
closures take ``(rho, theta)``; the ``-`` phase (lower, incompressible)
closures take ``theta`` only.

Closures are built from short text specs such as ``"constant 1.0"``,
``"ideal_gas R=1"``, ``"affine a=1 b=0.1 c=0"`` or
``"expr -theta*log(theta)"`` (see :func:`make_closure`).
"""
from __future__ import annotations

import logging
import shlex
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

PLUS_KEYS = ("mu_plus", "lambda_plus", "kappa_plus", "d_plus", "P_plus",
             "psi_plus", "eta_plus")
MINUS_KEYS = ("mu_minus", "kappa_minus", "d_minus", "psi_minus", "eta_minus")
POSITIVE_KEYS = ("mu_plus", "lambda_plus", "kappa_plus", "d_plus",
                 "mu_minus", "kappa_minus", "d_minus")


class ClosureError(ValueError):
    pass


class Closure:
    """A scalar function of ``(rho, theta)`` or ``theta`` with a text spec.

    The wrapped callable is vectorised over numpy arrays.  ``spec`` is the
    text it was built from, so closures round-trip through config files.
    """

    def __init__(self, func: Callable, spec: str, phase: str):
        self.func = func
        self.spec = spec
        self.phase = phase

    def __call__(self, *args):
        out = self.func(*args)
        if np.ndim(out) == 0 and args and np.ndim(args[0]) > 0:
            out = np.full(np.shape(args[0]), float(out))
        return out

    def shifted(self, c: float) -> "Closure":
        """Return ``self + c`` (used to enforce the equilibrium identity)."""
        if c == 0.0:
            return self
        base = self.func
        spec = f"{self.spec} ; shift {c!r}"
        return Closure(lambda *a: base(*a) + c, spec, self.phase)

    def __repr__(self):
        return f"Closure({self.spec!r}, phase={self.phase!r})"


def _parse_kv(tokens):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ClosureError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _expr_closure(expr: str, phase: str):
    import sympy as sp

    rho, theta = sp.symbols("rho theta", positive=True)
    try:
        e = sp.sympify(expr, locals={"rho": rho, "theta": theta})
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ClosureError(f"cannot parse expression {expr!r}: {exc}") from exc
    allowed = {rho, theta} if phase == "plus" else {theta}
    extra = e.free_symbols - allowed
    if extra:
        raise ClosureError(f"expression {expr!r} uses unknown symbols {sorted(map(str, extra))}")
    if phase == "plus":
        return sp.lambdify((rho, theta), e, "numpy")
    return sp.lambdify((theta,), e, "numpy")


def _table_closure(path: str, phase: str):
    from scipy.interpolate import CubicSpline, RectBivariateSpline

    data = np.loadtxt(path, delimiter=",", comments="#")
    if phase == "plus":
        # header-less grid: first row = theta nodes (leading cell ignored),
        # first column = rho nodes, interior = values
        th = data[0, 1:]
        rh = data[1:, 0]
        vals = data[1:, 1:]
        spl = RectBivariateSpline(rh, th, vals, kx=3, ky=3)
        return lambda r, t: spl.ev(r, t)
    spl = CubicSpline(data[:, 0], data[:, 1])
    return lambda t: spl(t)


def make_closure(spec: str, phase: str) -> Closure:
    """Build a closure from its text spec.

    Supported kinds::

        constant <value>
        affine a=<a> b=<b> c=<c>        a + b*rho + c*theta   (minus: a + c*theta)
        ideal_gas R=<R>                 R*rho*theta           (plus only)
        expr <sympy expression in rho, theta>
        table <csv path>                cubic interpolation
    """
    spec = spec.strip()
    if not spec:
        raise ClosureError("empty closure spec")
    base_spec, _, shift = spec.partition(";")
    kind, _, rest = base_spec.strip().partition(" ")
    rest = rest.strip()
    if kind == "constant":
        try:
            c = float(rest)
        except ValueError as exc:
            raise ClosureError(f"constant needs a number, got {rest!r}") from exc
        f = (lambda r, t: c + 0.0 * r) if phase == "plus" else (lambda t: c + 0.0 * t)
    elif kind == "affine":
        kv = _parse_kv(shlex.split(rest))
        a, b, cc = kv.get("a", 0.0), kv.get("b", 0.0), kv.get("c", 0.0)
        if phase == "plus":
            f = lambda r, t: a + b * r + cc * t
        else:
            f = lambda t: a + cc * t
    elif kind == "ideal_gas":
        if phase != "plus":
            raise ClosureError("ideal_gas is only defined for the compressible phase")
        R = _parse_kv(shlex.split(rest)).get("R", 1.0)
        f = lambda r, t: R * r * t
    elif kind == "expr":
        f = _expr_closure(rest, phase)
    elif kind == "table":
        f = _table_closure(rest, phase)
    else:
        raise ClosureError(f"unknown closure kind {kind!r}")
    clo = Closure(f, base_spec.strip(), phase)
    if shift.strip():
        _, _, val = shift.strip().partition(" ")
        clo = clo.shifted(float(val))
    return clo


DEFAULT_CLOSURES = {
    "mu_plus": "constant 1.0",
    "lambda_plus": "constant 1.0",
    "kappa_plus": "constant 1.0",
    "d_plus": "constant 1.0",
    "P_plus": "ideal_gas R=1.0",
    "psi_plus": "expr theta*log(rho) - theta*log(theta)",
    "eta_plus": "expr -log(rho) + log(theta) + 1",
    "mu_minus": "constant 1.0",
    "kappa_minus": "constant 1.0",
    "d_minus": "constant 1.0",
    "psi_minus": "expr -theta*log(theta) + 0.5*theta",
    "eta_minus": "expr log(theta) + 0.5",
}


@dataclass
class MaterialSystem:
    """Equilibrium constants plus constitutive closures of both phases."""

    rho_star_plus: float = 1.0
    rho_star_minus: float = 2.0
    theta_star: float = 1.0
    sigma: float = 0.1
    N: int = 2
    closures: dict = field(default_factory=dict)

    def __post_init__(self):
        specs = dict(DEFAULT_CLOSURES)
        built = {}
        for k, v in self.closures.items():
            if k not in specs:
                raise ClosureError(f"unknown closure {k!r}")
            built[k] = v
        for k, spec in specs.items():
            v = built.get(k, spec)
            phase = "plus" if k in PLUS_KEYS else "minus"
            built[k] = v if isinstance(v, Closure) else make_closure(v, phase)
        self.closures = built

    def __getattr__(self, name):
        closures = self.__dict__.get("closures")
        if closures is not None and name in closures:
            return closures[name]
        raise AttributeError(name)

    def specs(self) -> dict:
        return {k: c.spec for k, c in self.closures.items()}

    # starred coefficients (evaluated at equilibrium)
    @property
    def starred(self) -> dict:
        r, t = self.rho_star_plus, self.theta_star
        return {
            "mu_plus": float(self.mu_plus(r, t)),
            "lambda_plus": float(self.lambda_plus(r, t)),
            "kappa_plus": float(self.kappa_plus(r, t)),
            "d_plus": float(self.d_plus(r, t)),
            "mu_minus": float(self.mu_minus(t)),
            "kappa_minus": float(self.kappa_minus(t)),
            "d_minus": float(self.d_minus(t)),
            "P_plus": float(self.P_plus(r, t)),
        }

    @property
    def sigma_plus(self) -> float:
        return self.rho_star_plus * self.sigma / (self.rho_star_minus - self.rho_star_plus)

    @property
    def sigma_minus(self) -> float:
        return self.rho_star_minus * self.sigma / (self.rho_star_minus - self.rho_star_plus)

    def with_equilibrium_shift(self) -> "MaterialSystem":
        """Shift ``psi_minus`` by a constant so the equilibrium residual vanishes."""
        res = equilibrium_residual(self)
        closures = dict(self.closures)
        closures["psi_minus"] = self.psi_minus.shifted(-res)
        return MaterialSystem(self.rho_star_plus, self.rho_star_minus,
                              self.theta_star, self.sigma, self.N, closures)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    where: tuple | None = None
    note: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            at = "" if c.where is None else f" at (rho, theta)={c.where}"
            yield f"{flag} {c.name}: worst={c.worst:.6g}{at} {c.note}".rstrip()


def fd_step(x):
    return 1e-5 * np.maximum(1.0, np.abs(x))


def _sample(box, n):
    (r0, r1), (t0, t1) = box
    if not (0 < r0 <= r1 and 0 < t0 <= t1):
        raise ValueError(f"sample box must lie in (0, inf)^2, got {box}")
    R, T = np.meshgrid(np.linspace(r0, r1, n), np.linspace(t0, t1, n), indexing="ij")
    return R, T


def _finite_or_raise(name, vals, R, T):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = np.argwhere(bad)[0]
        pt = (float(R[tuple(i)]), float(T[tuple(i)]))
        raise ClosureError(f"closure {name} is not finite at (rho, theta)={pt}")


def validate(material: MaterialSystem, sample_box=((0.5, 2.0), (0.5, 2.0)),
             n: int = 10, delta_rho: float = 1e-8) -> ValidationReport:
    """Check positivity, monotone pressure, the viscosity bound and distinct densities."""
    R, T = _sample(sample_box, n)
    checks = []
    for key in POSITIVE_KEYS:
        clo = material.closures[key]
        vals = np.asarray(clo(R, T) if clo.phase == "plus" else clo(T), dtype=float)
        _finite_or_raise(key, vals, R, T)
        i = np.unravel_index(np.argmin(vals), vals.shape)
        checks.append(CheckResult(f"positive {key}", bool(vals.min() > 0), float(vals.min()),
                                  (float(R[i]), float(T[i]))))
    for key in ("psi_plus", "eta_plus", "P_plus"):
        _finite_or_raise(key, np.asarray(material.closures[key](R, T), dtype=float), R, T)
    for key in ("psi_minus", "eta_minus"):
        _finite_or_raise(key, np.asarray(material.closures[key](T), dtype=float), R, T)

    dP = pressure_rho_derivative(material, R, T)
    _finite_or_raise("dP_plus/drho", dP, R, T)
    i = np.unravel_index(np.argmin(dP), dP.shape)
    checks.append(CheckResult("monotone P_plus", bool(dP.min() > 0), float(dP.min()),
                              (float(R[i]), float(T[i]))))

    N = material.N
    gap = material.lambda_plus(R, T) - (N - 2) / N * material.mu_plus(R, T)
    i = np.unravel_index(np.argmin(gap), gap.shape)
    checks.append(CheckResult("viscosity bound lambda >= (N-2)/N mu", bool(gap.min() >= 0),
                              float(gap.min()), (float(R[i]), float(T[i]))))

    drho = abs(material.rho_star_minus - material.rho_star_plus)
    checks.append(CheckResult("distinct densities", drho > delta_rho, drho))
    checks.append(CheckResult("non-negative sigma", material.sigma >= 0, material.sigma))
    return ValidationReport(checks)


def pressure_rho_derivative(material, rho, theta):
    h = fd_step(rho)
    return (material.P_plus(rho + h, theta) - material.P_plus(rho - h, theta)) / (2 * h)


def equilibrium_residual(material: MaterialSystem) -> float:
    """``psi_-(theta*) - psi_+(rho*_+, theta*) + (1/rho*_- - 1/rho*_+) P_+(rho*_+, theta*)``."""
    r, t = material.rho_star_plus, material.theta_star
    return float(material.psi_minus(t) - material.psi_plus(r, t)
                 + (1.0 / material.rho_star_minus - 1.0 / r) * material.P_plus(r, t))


@dataclass
class ConsistencyReport:
    max_deviation_plus: float
    max_deviation_minus: float
    min_fd_kappa: float
    passed: bool


def thermo_consistency(material: MaterialSystem, sample_box=((0.5, 2.0), (0.5, 2.0)),
                       n: int = 10) -> ConsistencyReport:
    """Compare the supplied specific heats with d(psi + theta*eta)/dtheta."""
    R, T = _sample(sample_box, n)
    h = fd_step(T)

    def e_plus(r, t):
        return material.psi_plus(r, t) + t * material.eta_plus(r, t)

    def e_minus(t):
        return material.psi_minus(t) + t * material.eta_minus(t)

    kp = (e_plus(R, T + h) - e_plus(R, T - h)) / (2 * h)
    km = (e_minus(T + h) - e_minus(T - h)) / (2 * h)
    dev_p = float(np.max(np.abs(kp - material.kappa_plus(R, T))))
    dev_m = float(np.max(np.abs(km - material.kappa_minus(T))))
    kmin = float(min(np.min(kp), np.min(km)))
    return ConsistencyReport(dev_p, dev_m, kmin, kmin > 0)


def stress(material: MaterialSystem, side: str, D, divu, pi, rho=None, theta=None,
           variant: str = "newton"):
    """Stress tensor at a point (or broadcast over trailing grid axes).

    ``D`` has shape ``(N, N, ...)``.  ``variant="newton"`` gives
    ``2 mu D + (lambda - mu) div u I - pi I`` on the + side and
    ``mu_- D - pi I`` on the - side.  ``variant="starred"`` gives the
    equilibrium-coefficient viscous part ``mu* D + (lambda* - mu*) div u I``
    (+) or ``mu*_- D`` (-), minus ``pi I``.
    """
    D = np.asarray(D, dtype=float)
    if not np.allclose(D, np.swapaxes(D, 0, 1), rtol=0, atol=1e-14):
        raise ValueError("strain tensor must be symmetric")
    N = D.shape[0]
    eye = np.eye(N).reshape((N, N) + (1,) * (D.ndim - 2))
    theta = material.theta_star if theta is None else theta
    rho = material.rho_star_plus if rho is None else rho
    if variant == "starred":
        st = material.starred
        if side == "plus":
            mu, lam = st["mu_plus"], st["lambda_plus"]
            return mu * D + (lam - mu) * divu * eye - pi * eye
        return st["mu_minus"] * D - pi * eye
    if variant != "newton":
        raise ValueError(f"unknown stress variant {variant!r}")
    if side == "plus":
        mu = material.mu_plus(rho, theta)
        lam = material.lambda_plus(rho, theta)
        return 2 * mu * D + (lam - mu) * divu * eye - pi * eye
    return material.mu_minus(theta) * D - pi * eye


def entropy_production_density(mu, lam, D, divu):
    """``2 mu |D|^2 + (lambda - mu) (div u)^2``; ``D`` shaped ``(N, N, ...)``."""
    D = np.asarray(D, dtype=float)
    return 2 * mu * np.sum(D * D, axis=(0, 1)) + (lam - mu) * np.asarray(divu) ** 2
