"""Nonlinear right-hand sides of the flattened two-phase system.

Every body term is assembled as "physical operator pulled back through the
flattening minus the constant-coefficient linear operator", so that the
linear problems see exactly the remainder.  Interface terms are derived
from the physical jump laws (normal stress balance, tangential stress
continuity, Gibbs-Thomson, Stefan, kinematic) written with the
unnormalised normal ``n = (-grad' h, 1)``.

Conventions: viscous stresses are ``mu D + (lambda - mu) div u I`` (+) and
``mu D`` (-) with ``D = (grad u + grad u^T) / 2``; ``[[f]] = f_- - f_+``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from .constitutive import MaterialSystem
from .geometry import (ExtendedHeight, f_minus, ff_minus, mean_curvature, strain,
                       surface_gradient, tensor_div, v_div, v_strain, v_tensor_div)
from .grid import Grid, Ops, interface_trace

CURVATURE_VARIANTS = ("printed", "classical")
FLUX_DENOMINATORS = ("total", "literal")
HEAT_SOURCES = ("display", "balance")


class PhaseFluxError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RhsOptions:
    curvature: str = "printed"
    flux_denominator: str = "total"
    heat_source: str = "display"
    delta_j: float = 1e-6

    def __post_init__(self):
        if self.curvature not in CURVATURE_VARIANTS:
            raise ValueError(f"curvature must be one of {CURVATURE_VARIANTS}")
        if self.flux_denominator not in FLUX_DENOMINATORS:
            raise ValueError(f"flux_denominator must be one of {FLUX_DENOMINATORS}")
        if self.heat_source not in HEAT_SOURCES:
            raise ValueError(f"heat_source must be one of {HEAT_SOURCES}")


# -- phase flux ------------------------------------------------------------------

def inverse_density_jump(material: MaterialSystem, rho_trace, variant: str = "total",
                         delta_j: float = 1e-6):
    """``1/rho*_- - 1/rho_+`` at the interface, with a margin check.

    ``variant="literal"`` uses ``rho_+ + rho*_+`` in place of ``rho_+``.
    """
    rho = rho_trace if variant == "total" else rho_trace + material.rho_star_plus
    jump = 1.0 / material.rho_star_minus - 1.0 / rho
    if np.any(np.abs(jump) < delta_j):
        raise PhaseFluxError(f"|[[1/rho]]| below margin {delta_j}")
    return jump


def phase_flux(material: MaterialSystem, grid: Grid, state, options: RhsOptions = RhsOptions()):
    """Mass flux across the interface, ``[[u_N]] sqrt(1+|grad'h|^2) / [[1/rho]]``."""
    gh = surface_gradient(grid, state.h)
    S = np.sqrt(1 + np.sum(gh**2, axis=0))
    un = interface_trace(state.u_minus[-1], "minus") - interface_trace(state.u_plus[-1], "plus")
    inv = inverse_density_jump(material, interface_trace(state.rho_plus, "plus"),
                               options.flux_denominator, options.delta_j)
    return un * S / inv


def phase_flux_from_normal_jump(normal_velocity_jump, inv_rho_jump):
    """``[[u]].n / [[1/rho]]`` with a unit normal."""
    return np.asarray(normal_velocity_jump) / np.asarray(inv_rho_jump)


def phase_flux_from_mass_balance(rho_minus, rho_plus, un_minus, un_plus):
    """``rho_- (u_-.n - V)`` with ``V = [[rho u]].n / [[rho]]``."""
    V = (rho_minus * un_minus - rho_plus * un_plus) / (rho_minus - rho_plus)
    return rho_minus * (un_minus - V)


# -- per-side derived quantities --------------------------------------------------

@dataclass
class _Side:
    u: np.ndarray
    theta: np.ndarray
    D: np.ndarray
    VD: np.ndarray
    Dph: np.ndarray
    div: np.ndarray
    Vdiv: np.ndarray
    mu: np.ndarray
    mu_t: np.ndarray
    lam: np.ndarray | None
    lam_t: np.ndarray | None
    kappa: np.ndarray
    d: np.ndarray
    d_t: np.ndarray
    dev: np.ndarray

    @property
    def divph(self):
        return self.div + self.Vdiv


def _side(ops: Ops, material: MaterialSystem, eh: ExtendedHeight, side: str, u, theta, rho=None):
    st = material.starred
    N = ops.grid.N
    D = strain(ops, u)
    VD = v_strain(ops, u, eh, side)
    Dph = D + VD
    div = ops.div(u)
    Vd = v_div(ops, u, eh, side)
    eye = np.eye(N).reshape((N, N) + (1,) * theta.ndim)
    if side == "plus":
        mu = material.mu_plus(rho, theta)
        lam = material.lambda_plus(rho, theta)
        kappa = material.kappa_plus(rho, theta)
        d = material.d_plus(rho, theta)
        dev = mu * Dph + (lam - mu) * (div + Vd) * eye
        return _Side(u, theta, D, VD, Dph, div, Vd, mu, mu - st["mu_plus"], lam,
                     lam - st["lambda_plus"], kappa, d, d - st["d_plus"], dev)
    mu = material.mu_minus(theta)
    kappa = material.kappa_minus(theta)
    d = material.d_minus(theta)
    return _Side(u, theta, D, VD, Dph, div, Vd, mu, mu - st["mu_minus"], None, None,
                 kappa, d, d - st["d_minus"], mu * Dph)


def _convective(ops: Ops, f, u, eh: ExtendedHeight, side: str):
    """``K_0 d_N f - u.grad f + (u.K) d_N f`` for a scalar ``f``."""
    N = ops.grid.N
    dn = ops.dn(f)
    uK = sum(u[b] * eh.K[side][b] for b in range(N))
    return eh.K0[side] * dn - sum(u[b] * ops.d(f, b) for b in range(N)) + uK * dn


def _div_phys(ops: Ops, q, eh: ExtendedHeight, side: str):
    """Physical divergence of a vector field given in flattened coordinates."""
    return ops.div(q) + v_div(ops, q, eh, side)


def _Div_phys(ops: Ops, G, eh: ExtendedHeight, side: str):
    return tensor_div(ops, G) + v_tensor_div(ops, G, eh, side)


def _laplacian(ops: Ops, f):
    return sum(ops.d(ops.d(f, a), a) for a in range(ops.grid.N))


def _linear_viscous(ops: Ops, u, mu, lam=None):
    """``Div S*(u)`` with constant coefficients."""
    out = mu * tensor_div(ops, strain(ops, u))
    if lam is not None:
        out = out + (lam - mu) * ops.grad(ops.div(u))
    return out


def _heat_flux(ops: Ops, theta, d, eh: ExtendedHeight, side: str):
    """``d * grad_phys theta`` in flattened coordinates."""
    dn = ops.dn(theta)
    K = eh.K[side]
    return np.stack([d * (ops.d(theta, a) - K[a] * dn) for a in range(ops.grid.N)])


def _apply_Q1(eh: ExtendedHeight, side: str, X):
    dH = eh.dH[side]
    return np.stack([dH[a] * X[-1] for a in range(X.shape[0])])


# -- body terms -------------------------------------------------------------------

@dataclass
class BodyTerms:
    """Body right-hand sides split into named contributions."""

    F_plus: np.ndarray
    F_theta_plus: np.ndarray
    F_minus: np.ndarray
    F_theta_minus: np.ndarray
    f_minus: np.ndarray
    ff_minus: np.ndarray
    parts: dict = field(default_factory=dict)


def _time_derivative(cur, prev, dt):
    if prev is None:
        return np.zeros_like(cur)
    return (cur - prev) / dt


def assemble_body_rhs(material: MaterialSystem, grid: Grid, state, eh: ExtendedHeight,
                      prev=None, dt: float | None = None,
                      options: RhsOptions = RhsOptions()) -> BodyTerms:
    """Body right-hand sides at ``state``.

    ``prev`` is the committed state at the previous time level; time
    derivatives are backward differences against it (zero when absent).
    """
    ops = Ops(grid)
    st = material.starred
    rs_p, rs_m = material.rho_star_plus, material.rho_star_minus
    dt = grid.dt if dt is None else dt
    rho = state.rho_plus
    P = material.P_plus(rho, state.theta_plus)
    parts = {}

    # + side momentum
    sp = _side(ops, material, eh, "plus", state.u_plus, state.theta_plus, rho)
    ut = _time_derivative(state.u_plus, None if prev is None else prev.u_plus, dt)
    N = grid.N
    eye = np.eye(N).reshape((N, N) + (1,) * rho.ndim)
    S_ph = sp.mu * sp.Dph + (sp.lam - sp.mu) * sp.divph * eye
    parts["F_plus.inertia"] = -(rho - rs_p) * ut
    parts["F_plus.convection"] = rho * np.stack(
        [_convective(ops, state.u_plus[a], state.u_plus, eh, "plus") for a in range(N)])
    parts["F_plus.viscous"] = (_Div_phys(ops, S_ph, eh, "plus")
                               - _linear_viscous(ops, state.u_plus, st["mu_plus"], st["lambda_plus"]))
    gP = ops.grad(P)
    parts["F_plus.pressure"] = -(gP - eh.K["plus"] * ops.dn(P))
    F_plus = sum(parts[k] for k in ("F_plus.inertia", "F_plus.convection",
                                    "F_plus.viscous", "F_plus.pressure"))

    # + side energy
    tt = _time_derivative(state.theta_plus, None if prev is None else prev.theta_plus, dt)
    rk = rho * sp.kappa
    q = _heat_flux(ops, state.theta_plus, sp.d, eh, "plus")
    parts["F_theta_plus.inertia"] = -(rk - rs_p * st["kappa_plus"]) * tt
    parts["F_theta_plus.convection"] = rk * _convective(ops, state.theta_plus, state.u_plus, eh, "plus")
    parts["F_theta_plus.conduction"] = (_div_phys(ops, q, eh, "plus")
                                        - st["d_plus"] * _laplacian(ops, state.theta_plus))
    parts["F_theta_plus.dissipation"] = (2 * sp.mu * np.sum(sp.Dph**2, axis=(0, 1))
                                         + (sp.lam - sp.mu) * sp.divph**2)
    sgn = 1.0 if options.heat_source == "display" else -1.0
    work = P * (1 - 1 / rho) if options.heat_source == "display" else P / rho
    parts["F_theta_plus.pressure_work"] = sgn * work * sp.divph
    F_theta_plus = sum(parts[k] for k in ("F_theta_plus.inertia", "F_theta_plus.convection",
                                          "F_theta_plus.conduction", "F_theta_plus.dissipation",
                                          "F_theta_plus.pressure_work"))

    # - side momentum
    sm = _side(ops, material, eh, "minus", state.u_minus, state.theta_minus)
    um_t = _time_derivative(state.u_minus, None if prev is None else prev.u_minus, dt)
    lin = _linear_viscous(ops, state.u_minus, st["mu_minus"])
    parts["F_minus.frame"] = -_apply_Q1(eh, "minus", rs_m * um_t - lin)
    inner = (rs_m * np.stack([_convective(ops, state.u_minus[a], state.u_minus, eh, "minus")
                              for a in range(N)])
             + _Div_phys(ops, sm.mu * sm.Dph, eh, "minus") - lin)
    parts["F_minus.bracket"] = inner + _apply_Q1(eh, "minus", inner)
    F_minus = parts["F_minus.frame"] + parts["F_minus.bracket"]

    # - side energy
    tmt = _time_derivative(state.theta_minus, None if prev is None else prev.theta_minus, dt)
    qm = _heat_flux(ops, state.theta_minus, sm.d, eh, "minus")
    parts["F_theta_minus.inertia"] = -rs_m * (sm.kappa - st["kappa_minus"]) * tmt
    parts["F_theta_minus.convection"] = rs_m * sm.kappa * _convective(
        ops, state.theta_minus, state.u_minus, eh, "minus")
    parts["F_theta_minus.conduction"] = (_div_phys(ops, qm, eh, "minus")
                                         - st["d_minus"] * _laplacian(ops, state.theta_minus))
    parts["F_theta_minus.dissipation"] = 2 * sm.mu * np.sum(sm.Dph**2, axis=(0, 1))
    F_theta_minus = sum(parts[k] for k in ("F_theta_minus.inertia", "F_theta_minus.convection",
                                           "F_theta_minus.conduction",
                                           "F_theta_minus.dissipation"))

    fm = f_minus(ops, state.u_minus, eh, "minus")
    ffm = ff_minus(state.u_minus, eh, "minus")
    return BodyTerms(F_plus, F_theta_plus, F_minus, F_theta_minus, fm, ffm, parts)


def body_viscous_compact(material: MaterialSystem, grid: Grid, state, eh: ExtendedHeight):
    """Viscous remainder of the + momentum equation in grouped form.

    ``Div(mu~ D + mu V_D) + V_Div(mu (D + V_D)) + grad{(lam~ - mu~) div
    + (lam - mu) V_div} + V_Div((lam - mu)(div + V_div) I)``; algebraically
    identical to the term-by-term assembly and used to cross-check it.
    """
    ops = Ops(grid)
    sp = _side(ops, material, eh, "plus", state.u_plus, state.theta_plus, state.rho_plus)
    N = grid.N
    eye = np.eye(N).reshape((N, N) + (1,) * state.theta_plus.ndim)
    out = tensor_div(ops, sp.mu_t * sp.D + sp.mu * sp.VD)
    out = out + v_tensor_div(ops, sp.mu * sp.Dph, eh, "plus")
    out = out + ops.grad((sp.lam_t - sp.mu_t) * sp.div + (sp.lam - sp.mu) * sp.Vdiv)
    out = out + v_tensor_div(ops, (sp.lam - sp.mu) * sp.divph * eye, eh, "plus")
    return out


# -- interface terms ----------------------------------------------------------------

@dataclass
class InterfaceTerms:
    G: np.ndarray          # (N+1, ...) rows G_1..G_{N-1}, G_N, G_{N+1}
    K: np.ndarray          # (N-1, ...)
    G_theta: np.ndarray
    G_h: np.ndarray
    j: np.ndarray
    parts: dict = field(default_factory=dict)


def _tr(a, side):
    return interface_trace(a, side)


def _viscous_tractions(material: MaterialSystem, state, ops: Ops):
    st = material.starred
    Tm = st["mu_minus"] * _tr(ops.dn(state.u_minus[-1]), "minus")
    Tp = (st["mu_plus"] * _tr(ops.dn(state.u_plus[-1]), "plus")
          + (st["lambda_plus"] - st["mu_plus"]) * _tr(ops.div(state.u_plus), "plus"))
    return Tm, Tp


def linear_tractions(material: MaterialSystem, grid: Grid, state, ops: Ops | None = None):
    """Constant-coefficient normal tractions ``(T_-, T_+)`` at the interface."""
    ops = ops or Ops(grid)
    Tm, Tp = _viscous_tractions(material, state, ops)
    return Tm - _tr(state.pi_minus, "minus"), Tp


def assemble_interface_rhs(material: MaterialSystem, grid: Grid, state, eh: ExtendedHeight,
                           options: RhsOptions = RhsOptions()) -> InterfaceTerms:
    ops = Ops(grid)
    st = material.starred
    N = grid.N
    rs_p, rs_m = material.rho_star_plus, material.rho_star_minus
    rho = state.rho_plus
    sp = _side(ops, material, eh, "plus", state.u_plus, state.theta_plus, rho)
    sm = _side(ops, material, eh, "minus", state.u_minus, state.theta_minus)

    gh = surface_gradient(grid, state.h)
    S2 = 1 + np.sum(gh**2, axis=0)
    nt = np.concatenate([-gh, np.ones((1,) + S2.shape)])
    rho_i = _tr(rho, "plus")
    inv = inverse_density_jump(material, rho_i, options.flux_denominator, options.delta_j)
    unm, unp = _tr(state.u_minus[-1], "minus"), _tr(state.u_plus[-1], "plus")
    un_jump = unm - unp
    j = un_jump * np.sqrt(S2) / inv
    parts = {}

    # tangential stress continuity
    mDm = np.stack([[sm.mu * sm.Dph[a, b] for b in range(N)] for a in range(N)])
    mDp = np.stack([[sp.mu * sp.Dph[a, b] for b in range(N)] for a in range(N)])
    jmD = np.stack([[_tr(mDm[a, b], "minus") - _tr(mDp[a, b], "plus") for b in range(N)]
                    for a in range(N)])
    G = np.zeros((N + 1,) + S2.shape)
    for i in range(N - 1):
        lin_rem = (_tr(sm.mu_t * sm.D[i, -1] + sm.mu * sm.VD[i, -1], "minus")
                   - _tr(sp.mu_t * sp.D[i, -1] + sp.mu * sp.VD[i, -1], "plus"))
        geo = sum(gh[b] * jmD[i, b] for b in range(N - 1))
        geo2 = gh[i] * (sum(gh[b] * jmD[-1, b] for b in range(N - 1)) - jmD[-1, -1])
        G[i] = -lin_rem + geo + geo2

    # normal stress balance and Gibbs-Thomson law
    nDn_m = _nn(sm.dev, nt, "minus") / S2
    nDn_p = _nn(sp.dev, nt, "plus") / S2
    Tm_lin, Tp_lin = _viscous_tractions(material, state, ops)
    P_i = material.P_plus(rho_i, _tr(state.theta_plus, "plus"))
    P_star = st["P_plus"]
    HG = mean_curvature(grid, state.h, options.curvature)
    lap_h = ops.lap_tan(state.h)
    kin = un_jump**2 * S2 / inv
    parts["G_N.viscous"] = Tm_lin - Tp_lin - (nDn_m - nDn_p)
    parts["G_N.flux"] = kin
    parts["G_N.pressure"] = -(P_i - P_star)
    parts["G_N.curvature"] = material.sigma * (HG - lap_h)
    G[N - 1] = sum(parts[k] for k in ("G_N.viscous", "G_N.flux", "G_N.pressure", "G_N.curvature"))

    psi_jump = (material.psi_minus(_tr(state.theta_minus, "minus"))
                - material.psi_plus(rho_i, _tr(state.theta_plus, "plus")))
    parts["G_N+1.viscous"] = (Tm_lin / rs_m - Tp_lin / rs_p - nDn_m / rs_m + nDn_p / rho_i)
    parts["G_N+1.pressure"] = P_star / rs_m - P_i / rho_i
    parts["G_N+1.free_energy"] = psi_jump
    parts["G_N+1.flux"] = 0.5 * (1 / rs_m + 1 / rho_i) * kin
    G[N] = sum(parts[k] for k in ("G_N+1.viscous", "G_N+1.pressure", "G_N+1.free_energy",
                                  "G_N+1.flux"))

    # velocity slip
    K = np.stack([-gh[i] * un_jump for i in range(N - 1)]) if N > 1 else np.zeros((0,) + S2.shape)

    # Stefan law
    th_m, th_p = _tr(state.theta_minus, "minus"), _tr(state.theta_plus, "plus")
    te_jump = (th_m * material.eta_minus(th_m)
               - th_p * material.eta_plus(rho_i, th_p))
    qm = _heat_flux(ops, state.theta_minus, sm.d_t, eh, "minus")
    qp = _heat_flux(ops, state.theta_plus, sp.d_t, eh, "plus")
    dq = np.stack([_tr(qm[a], "minus") - _tr(qp[a], "plus") for a in range(N)])
    dstar_m, dstar_p = st["d_minus"], st["d_plus"]
    grad_m = [_tr(ops.d(state.theta_minus, a), "minus") for a in range(N)]
    grad_p = [_tr(ops.d(state.theta_plus, a), "plus") for a in range(N)]
    Km = [_tr(eh.K["minus"][a], "minus") for a in range(N)]
    Kn = sum(Km[a] * nt[a] for a in range(N))
    parts["G_theta.latent"] = S2 * un_jump / inv * te_jump
    parts["G_theta.conductivity"] = -sum(dq[a] * nt[a] for a in range(N))
    parts["G_theta.tangential"] = sum((dstar_m * grad_m[a] - dstar_p * grad_p[a]) * gh[a]
                                      for a in range(N - 1))
    parts["G_theta.normal"] = (dstar_m * grad_m[-1] - dstar_p * grad_p[-1]) * Kn
    G_theta = sum(parts[k] for k in ("G_theta.latent", "G_theta.conductivity",
                                     "G_theta.tangential", "G_theta.normal"))

    # kinematic law
    utm = [_tr(state.u_minus[a], "minus") for a in range(N)]
    utp = [_tr(state.u_plus[a], "plus") for a in range(N)]
    G_h = kinematic_remainder(material, rho_i, utm, utp, gh)
    return InterfaceTerms(G, K, G_theta, G_h, j, parts)


def _nn(dev, nt, side):
    N = dev.shape[0]
    return sum(nt[a] * nt[b] * _tr(dev[a, b], side) for a in range(N) for b in range(N))


def kinematic_remainder(material: MaterialSystem, rho_i, u_minus_tr, u_plus_tr, grad_h):
    """Kinematic law remainder ``G_h``.

    The interface speed along ``n = (-grad'h, 1)`` is
    ``(rho_- u_-.n - rho_+ u_+.n) / (rho_- - rho_+)``; the part linear in
    the normal velocities with equilibrium densities is removed.
    """
    rm, rp = material.rho_star_minus, material.rho_star_plus
    N = len(u_minus_tr)
    nm = u_minus_tr[-1] - sum(grad_h[a] * u_minus_tr[a] for a in range(N - 1))
    npl = u_plus_tr[-1] - sum(grad_h[a] * u_plus_tr[a] for a in range(N - 1))
    full = (rm * nm - rho_i * npl) / (rm - rho_i)
    lin = (rm * u_minus_tr[-1] - rp * u_plus_tr[-1]) / (rm - rp)
    return full - lin


def kinematic_remainder_display(material: MaterialSystem, rho_i, u_minus_tr, u_plus_tr, grad_h):
    """``G_h`` in the expanded four-term layout (same value as :func:`kinematic_remainder`)."""
    rm, rp = material.rho_star_minus, material.rho_star_plus
    N = len(u_minus_tr)
    a = (1 / (rm - rho_i) - 1 / (rm - rp)) * (rm * u_minus_tr[-1] - rp * u_plus_tr[-1])
    b = (rp - rho_i) / (rm - rho_i) * u_plus_tr[-1]
    c = -rm / (rm - rho_i) * sum(grad_h[i] * u_minus_tr[i] for i in range(N - 1))
    d = rho_i / (rm - rho_i) * sum(grad_h[i] * u_plus_tr[i] for i in range(N - 1))
    return a + b + c + d


# -- traction split ------------------------------------------------------------------

def traction_split(material: MaterialSystem, G_N, G_N1, lap_H):
    """One-sided normal tractions ``(T_-, T_+)`` equivalent to the jump pair.

    ``T_- - T_+ = sigma lap_H + G_N`` and ``T_-/rho*_- - T_+/rho*_+ = G_{N+1}``.
    """
    rm, rp = material.rho_star_minus, material.rho_star_plus
    c = rm * rp / (rm - rp)
    Tm = material.sigma_minus * lap_H + c * (G_N / rp - G_N1)
    Tp = material.sigma_plus * lap_H + c * (G_N / rm - G_N1)
    return Tm, Tp


def stokes_interface_data(material: MaterialSystem, terms: InterfaceTerms, N: int):
    """Data ``(g_1..g_{N+1}, h_1..h_{N-1}, d)`` of the linear Stokes interface rows."""
    zero = np.zeros_like(terms.G[0])
    g_m, g_p = traction_split(material, terms.G[N - 1], terms.G[N], zero)
    g = np.concatenate([terms.G[: N - 1], g_m[None], g_p[None]])
    return g, terms.K, terms.G_h


# -- bundle ------------------------------------------------------------------------

@dataclass
class RhsBundle:
    F_plus: np.ndarray
    F_theta_plus: np.ndarray
    F_minus: np.ndarray
    F_theta_minus: np.ndarray
    f_minus: np.ndarray
    ff_minus: np.ndarray
    G: np.ndarray
    K: np.ndarray
    G_theta: np.ndarray
    G_h: np.ndarray
    j: np.ndarray
    parts: dict = field(default_factory=dict, repr=False)

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "parts"}

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(v)) if v.size else 0.0 for v in self.arrays().values()))

    def write_csv(self, path):
        """Interface terms, one row per interface node, one column per term and part."""
        N = self.G.shape[0] - 1
        cols = {f"G_{i + 1}": self.G[i] for i in range(N - 1)}
        cols["G_N"] = self.G[N - 1]
        cols["G_N+1"] = self.G[N]
        cols.update({f"K_{i + 1}": self.K[i] for i in range(N - 1)})
        cols.update({"G_theta": self.G_theta, "G_h": self.G_h, "j": self.j})
        for k, v in self.parts.items():
            if np.shape(v) == np.shape(self.G_h):
                cols[k] = v
        names = list(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + names)
            flat = {k: np.ravel(v) for k, v in cols.items()}
            for i in range(self.G_h.size):
                w.writerow([i] + [repr(float(flat[k][i])) for k in names])


def assemble(material: MaterialSystem, grid: Grid, state, eh: ExtendedHeight, prev=None,
             dt: float | None = None, options: RhsOptions = RhsOptions()) -> RhsBundle:
    body = assemble_body_rhs(material, grid, state, eh, prev, dt, options)
    itf = assemble_interface_rhs(material, grid, state, eh, options)
    parts = dict(body.parts)
    parts.update(itf.parts)
    return RhsBundle(body.F_plus, body.F_theta_plus, body.F_minus, body.F_theta_minus,
                     body.f_minus, body.ff_minus, itf.G, itf.K, itf.G_theta, itf.G_h, itf.j,
                     parts)


# -- compatibility of initial data -------------------------------------------------------

COMPAT_NAMES = ("divergence", "tangential_stress", "velocity_slip", "temperature_continuity",
                "heat_flux", "normal_stress")


def _trace_norm(grid: Grid, g, s: float = 0.5):
    """Spectral ``H^s`` proxy of an interface-line function."""
    ks = grid.wavenumbers()
    k2 = sum(k**2 for k in ks)
    G = grid.rfft(g)
    w = np.full(G.shape, 2.0)
    w[..., 0] = 1.0
    if grid.M_tan % 2 == 0:
        w[..., -1] = 1.0
    val = np.sum(w * (1 + k2) ** s * np.abs(G) ** 2) / grid.M_tan ** (2 * (grid.N - 1))
    return float(np.sqrt(val * grid.L_tan ** (grid.N - 1)))


def compatibility_fields(material: MaterialSystem, grid: Grid, state, eh: ExtendedHeight,
                         options: RhsOptions = RhsOptions()) -> dict:
    """Pointwise residuals of the six compatibility conditions."""
    ops = Ops(grid)
    st = material.starred
    N = grid.N
    itf = assemble_interface_rhs(material, grid, state, eh, options)
    out = {}
    out["divergence"] = ops.div(state.u_minus) - f_minus(ops, state.u_minus, eh, "minus")
    Dm, Dp = strain(ops, state.u_minus), strain(ops, state.u_plus)
    out["tangential_stress"] = np.stack(
        [st["mu_minus"] * _tr(Dm[i, -1], "minus") - st["mu_plus"] * _tr(Dp[i, -1], "plus") - itf.G[i]
         for i in range(N - 1)])
    out["velocity_slip"] = np.stack(
        [_tr(state.u_minus[i], "minus") - _tr(state.u_plus[i], "plus") - itf.K[i]
         for i in range(N - 1)])
    out["temperature_continuity"] = _tr(state.theta_minus, "minus") - _tr(state.theta_plus, "plus")
    out["heat_flux"] = (st["d_minus"] * _tr(ops.dn(state.theta_minus), "minus")
                        - st["d_plus"] * _tr(ops.dn(state.theta_plus), "plus") - itf.G_theta)
    _, Tp = linear_tractions(material, grid, state, ops)
    _, Tp_data = traction_split(material, itf.G[N - 1], itf.G[N], ops.lap_tan(state.h))
    out["normal_stress"] = Tp - Tp_data
    return out


def compatibility_residual(material: MaterialSystem, grid: Grid, state, eh: ExtendedHeight,
                           options: RhsOptions = RhsOptions()) -> dict:
    """Sup and trace-norm proxy of each compatibility residual."""
    res = compatibility_fields(material, grid, state, eh, options)
    out = {}
    for name in COMPAT_NAMES:
        r = res[name]
        sup = float(np.max(np.abs(r))) if r.size else 0.0
        if name == "divergence":
            from .grid import norm
            proxy = norm(grid, r, "Lq")
        elif r.ndim > grid.N - 1:
            proxy = float(np.sqrt(sum(_trace_norm(grid, c) ** 2 for c in r)))
        else:
            proxy = _trace_norm(grid, r)
        out[name] = {"sup": sup, "trace_norm": proxy}
    return out
