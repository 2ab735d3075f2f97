"""Physical-frame checks: conservation budgets, entropy, interface jump residuals.

Integrals over the moving phases are evaluated on the flattened strips with
the Jacobian ``1 + dH/dx_N``.  Interface laws are evaluated with physical
gradients ``grad u = Q grad u_hat`` and fourth-order normal differences, so
they measure the discretisation error of the solver rather than repeat its
own stencils.  The lower phase carries the physical pressure
``pi_minus + P*``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .constitutive import MaterialSystem
from .geometry import extend_height, mean_curvature, surface_gradient
from .grid import Grid, Ops, integrate, integrate_line, interface_trace, norm
from .rhs import RhsOptions

CASES = (31, 32, 33)


# -- budgets ------------------------------------------------------------------------------

def _jacobians(grid: Grid, state):
    eh = extend_height(grid, state.h, state.dh_dt)
    return eh, {s: 1 + eh.dH[s][-1] for s in ("plus", "minus")}


def surface_area(grid: Grid, h) -> float:
    gh = surface_gradient(grid, h)
    return integrate_line(grid, np.sqrt(1 + np.sum(gh**2, axis=0)))


def _internal_energy(material: MaterialSystem, side, rho, theta):
    if side == "plus":
        return material.psi_plus(rho, theta) + theta * material.eta_plus(rho, theta)
    return material.psi_minus(theta) + theta * material.eta_minus(theta)


def totals(material: MaterialSystem, grid: Grid, state) -> dict:
    """Mass, momentum, energy plus surface energy, and entropy of one state."""
    _, J = _jacobians(grid, state)
    rp, rm = state.rho_plus, material.rho_star_minus
    out = {"t": state.t}
    out["mass"] = integrate(grid, rp * J["plus"]) + rm * integrate(grid, J["minus"])
    for a in range(grid.N):
        out[f"momentum_{a + 1}"] = (integrate(grid, rp * state.u_plus[a] * J["plus"])
                                    + rm * integrate(grid, state.u_minus[a] * J["minus"]))
    ke_p = 0.5 * np.sum(state.u_plus**2, axis=0)
    ke_m = 0.5 * np.sum(state.u_minus**2, axis=0)
    e_p = _internal_energy(material, "plus", rp, state.theta_plus)
    e_m = _internal_energy(material, "minus", rm, state.theta_minus)
    area = surface_area(grid, state.h)
    out["surface_area"] = area
    out["energy"] = (integrate(grid, rp * (ke_p + e_p) * J["plus"])
                     + integrate(grid, rm * (ke_m + e_m) * J["minus"]) + material.sigma * area)
    out["entropy"] = (integrate(grid, rp * material.eta_plus(rp, state.theta_plus) * J["plus"])
                      + integrate(grid, rm * material.eta_minus(state.theta_minus) * J["minus"]))
    return out


def outer_fluxes(material: MaterialSystem, grid: Grid, state) -> dict:
    """Outflow through the truncation planes ``x_N = +-L`` (mass and heat)."""
    ops = Ops(grid)
    top = lambda f: f[..., -1]  # noqa: E731
    bot = lambda f: f[..., 0]  # noqa: E731
    mass = (integrate_line(grid, top(state.rho_plus * state.u_plus[-1]))
            - material.rho_star_minus * integrate_line(grid, bot(state.u_minus[-1])))
    dp = material.d_plus(state.rho_plus, state.theta_plus)
    dm = material.d_minus(state.theta_minus)
    heat = (-integrate_line(grid, top(dp * ops.dn(state.theta_plus)))
            + integrate_line(grid, bot(dm * ops.dn(state.theta_minus))))
    return {"mass": mass, "energy": heat}


def conservation_budgets(material: MaterialSystem, grid: Grid, states) -> dict:
    """Drift per unit time of mass, momentum and energy, with truncation fluxes itemised.

    Mass and energy drifts are relative to their initial totals, momentum
    drifts are per unit initial mass.  The corrected drift adds back the time-integrated
    outflow through the truncation planes.
    """
    if len(states) < 2:
        raise ValueError("conservation budgets need at least two snapshots")
    tot = [totals(material, grid, s) for s in states]
    flux = [outer_fluxes(material, grid, s) for s in states]
    t = np.array([r["t"] for r in tot])
    T = t[-1] - t[0]
    out = {"duration": T}
    keys = ["mass", "energy"] + [f"momentum_{a + 1}" for a in range(grid.N)]
    for k in keys:
        v = np.array([r[k] for r in tot])
        fl = np.array([f.get(k, 0.0) for f in flux])
        leak = float(np.sum(0.5 * (fl[1:] + fl[:-1]) * np.diff(t)))
        # momentum starts near zero: report it per unit mass instead
        scale = abs(v[0]) if not k.startswith("momentum") else abs(tot[0]["mass"])
        raw = (v[-1] - v[0]) / (scale * T)
        out[k] = {"initial": float(v[0]), "final": float(v[-1]), "raw_drift": float(raw),
                  "truncation_flux": leak,
                  "drift": float((v[-1] - v[0] + leak) / (scale * T))}
    return out


# -- entropy ------------------------------------------------------------------------------

def _physical_grad(ops: Ops, f, eh, side):
    g = ops.grad(f)
    Q = eh.Q(side)
    return np.einsum("ab...,b...->a...", Q, g)


def _physical_strain(ops: Ops, u, eh, side):
    N = ops.grid.N
    G = np.stack([_physical_grad(ops, u[a], eh, side) for a in range(N)])  # G[a, b] = d_b u_a
    return 0.5 * (G + np.swapaxes(G, 0, 1)), np.einsum("aa...->...", G)


def viscous_production(material: MaterialSystem, grid: Grid, state, high_order: bool = False):
    """Pointwise ``2 mu |D|^2 + (lambda - mu)(div u)^2`` per side (physical gradients)."""
    ops = Ops(grid, high_order)
    eh, _ = _jacobians(grid, state)
    Dp, divp = _physical_strain(ops, state.u_plus, eh, "plus")
    Dm, _ = _physical_strain(ops, state.u_minus, eh, "minus")
    mu_p = material.mu_plus(state.rho_plus, state.theta_plus)
    lam_p = material.lambda_plus(state.rho_plus, state.theta_plus)
    mu_m = material.mu_minus(state.theta_minus)
    plus = 2 * mu_p * np.sum(Dp**2, axis=(0, 1)) + (lam_p - mu_p) * divp**2
    minus = 2 * mu_m * np.sum(Dm**2, axis=(0, 1))
    return plus, minus


def entropy_production(material: MaterialSystem, grid: Grid, state) -> float:
    """Volume integral of ``d |grad theta|^2 / theta^2`` plus viscous production."""
    ops = Ops(grid)
    eh, J = _jacobians(grid, state)
    vp, vm = viscous_production(material, grid, state)
    total = 0.0
    for side, th, v in (("plus", state.theta_plus, vp), ("minus", state.theta_minus, vm)):
        if np.any(th <= 0):
            raise ValueError("non-positive temperature")
        d = (material.d_plus(state.rho_plus, th) if side == "plus" else material.d_minus(th))
        gt = _physical_grad(ops, th, eh, side)
        total += integrate(grid, (d * np.sum(gt**2, axis=0) / th**2 + v) * J[side])
    return total


def entropy_monitor(material: MaterialSystem, grid: Grid, states) -> dict:
    entropy, production, vmin = [], [], []
    for s in states:
        if np.any(s.theta_plus <= 0) or np.any(s.theta_minus <= 0):
            raise ValueError("non-positive temperature")
        entropy.append(totals(material, grid, s)["entropy"])
        production.append(entropy_production(material, grid, s))
        vp, vm = viscous_production(material, grid, s)
        vmin.append(float(min(vp.min(), vm.min())))
    return {"entropy": entropy, "increments": list(np.diff(entropy)),
            "production": production, "min_viscous_production": min(vmin),
            "per_state_min": vmin}


# -- interface jump residuals -------------------------------------------------------------

@dataclass
class InterfaceTraces:
    n: np.ndarray
    S: np.ndarray
    HG: np.ndarray
    V: np.ndarray
    u: dict
    Tn: dict
    rho: dict
    theta: dict
    qn: dict            # d grad theta . n
    psi: dict
    eta: dict


def interface_traces(material: MaterialSystem, grid: Grid, state,
                     options: RhsOptions = RhsOptions(), high_order: bool = True) -> InterfaceTraces:
    ops = Ops(grid, high_order)
    N = grid.N
    eh, _ = _jacobians(grid, state)
    gh = surface_gradient(grid, state.h)
    S = np.sqrt(1 + np.sum(gh**2, axis=0))
    n = np.concatenate([-gh, np.ones((1,) + S.shape)]) / S
    HG = mean_curvature(grid, state.h, options.curvature)
    dh_dt = np.zeros_like(S) if state.dh_dt is None else state.dh_dt
    P_star = material.starred["P_plus"]
    u, Tn, rho, theta, qn, psi, eta = {}, {}, {}, {}, {}, {}, {}
    for side in ("plus", "minus"):
        uu = state.u_plus if side == "plus" else state.u_minus
        th = state.theta_plus if side == "plus" else state.theta_minus
        tr = lambda f: interface_trace(f, side)  # noqa: E731
        D, div = _physical_strain(ops, uu, eh, side)
        if side == "plus":
            r = state.rho_plus
            mu, lam = material.mu_plus(r, th), material.lambda_plus(r, th)
            p = material.P_plus(r, th)
            d = material.d_plus(r, th)
            iso = (lam - mu) * div - p
            rho[side] = tr(r)
            psi[side] = material.psi_plus(tr(r), tr(th))
            eta[side] = material.eta_plus(tr(r), tr(th))
        else:
            mu = material.mu_minus(th)
            d = material.d_minus(th)
            iso = -(state.pi_minus + P_star)
            rho[side] = np.full(S.shape, material.rho_star_minus)
            psi[side] = material.psi_minus(tr(th))
            eta[side] = material.eta_minus(tr(th))
        T = mu * D + iso * np.eye(N).reshape((N, N) + (1,) * th.ndim)
        Tt = np.stack([[tr(T[a, b]) for b in range(N)] for a in range(N)])
        Tn[side] = np.einsum("ab...,b...->a...", Tt, n)
        u[side] = np.stack([tr(uu[a]) for a in range(N)])
        theta[side] = tr(th)
        gt = np.stack([tr(g) for g in _physical_grad(ops, th, eh, side)])
        qn[side] = tr(d) * np.sum(gt * n, axis=0)
    return InterfaceTraces(n, S, HG, dh_dt / S, u, Tn, rho, theta, qn, psi, eta)


def _dot(a, b):
    return np.sum(a * b, axis=0)


def jump_fields(material: MaterialSystem, grid: Grid, state, case: int = 32,
                options: RhsOptions = RhsOptions(), high_order: bool = True) -> dict:
    """Pointwise residual of every interface law of condition set ``case``."""
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}")
    tr = interface_traces(material, grid, state, options, high_order)
    n, m, p = tr.n, "minus", "plus"
    J = lambda d: d[m] - d[p]  # noqa: E731
    du = J(tr.u)
    dTn = J(tr.Tn)
    sig = material.sigma
    out = {"temperature": J(tr.theta)}
    if case == 32:
        inv = 1 / tr.rho[m] - 1 / tr.rho[p]
        if np.any(np.abs(inv) < options.delta_j):
            raise ValueError("|[[1/rho]]| below the delta_j margin")
        j = _dot(du, n) / inv
        out["tangential_slip"] = du - _dot(du, n) * n
        out["stress_jump"] = j * du - dTn + sig * tr.HG * n
        out["stefan"] = j * J({s: tr.theta[s] * tr.eta[s] for s in (m, p)}) - J(tr.qn)
        nTn = {s: _dot(tr.Tn[s], n) / tr.rho[s] for s in (m, p)}
        half = {s: 0.5 / tr.rho[s] ** 2 for s in (m, p)}
        out["gibbs_thomson"] = J(tr.psi) + j**2 * J(half) - J(nTn)
        drho = tr.rho[m] - tr.rho[p]
        out["kinematic"] = tr.V - _dot(tr.rho[m] * tr.u[m] - tr.rho[p] * tr.u[p], n) / drho
        out["phase_flux"] = tr.rho[m] * (_dot(tr.u[m], n) - tr.V) - j
        return out
    out["velocity"] = du
    out["stress_jump"] = dTn - sig * tr.HG * n
    if case == 31:
        out["heat_flux"] = J(tr.qn)
        out["kinematic"] = tr.V - _dot(tr.u[m], n)
        return out
    if material.rho_star_minus != material.rho_star_plus:
        raise ValueError("case 33 requires equal phase densities")
    rho = material.rho_star_minus
    j = rho * (_dot(tr.u[m], n) - tr.V)
    out["stefan"] = j * J({s: tr.theta[s] * tr.eta[s] for s in (m, p)}) - J(tr.qn)
    out["gibbs_thomson"] = rho * J(tr.psi) - sig * tr.HG
    out["kinematic"] = _dot(du, n)
    return out


def jump_residuals(material: MaterialSystem, grid: Grid, state, case: int = 32,
                   options: RhsOptions = RhsOptions(), q: float = 2.0,
                   high_order: bool = True) -> dict:
    """Sup and ``L_q``-line norms of each interface law."""
    out = {}
    for name, r in jump_fields(material, grid, state, case, options, high_order).items():
        a = np.abs(np.asarray(r))
        if a.ndim == grid.N:          # vector-valued law: componentwise magnitude
            a = np.sqrt(np.sum(a**2, axis=0))
        out[name] = {"sup": float(a.max()), "Lq": integrate_line(grid, a**q) ** (1 / q)}
    return out


# -- surface-area cross-check -------------------------------------------------------------

def reynolds_check(grid: Grid, h_of_t, t: float, dt: float) -> tuple:
    """``d|Gamma|/dt`` by central differences against ``-int H_Gamma V dnu``.

    ``h_of_t`` maps a time to the interface height; the curvature is the
    classical ``div'(grad'h / sqrt(1 + |grad'h|^2))`` for which the identity
    is exact.
    """
    lhs = (surface_area(grid, h_of_t(t + dt)) - surface_area(grid, h_of_t(t - dt))) / (2 * dt)
    h = h_of_t(t)
    h_t = (h_of_t(t + dt) - h_of_t(t - dt)) / (2 * dt)
    HG = mean_curvature(grid, h, "classical")
    rhs = -integrate_line(grid, HG * h_t)
    return lhs, rhs


# -- reports ------------------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    rows: list = field(default_factory=list)
    budgets: dict = field(default_factory=dict)
    entropy: dict = field(default_factory=dict)


def state_norms(grid: Grid, state, material: MaterialSystem) -> dict:
    """Norm proxies of the solution components."""
    out = {"h_sup": float(np.max(np.abs(state.h)))}
    out["u_plus_W2"] = float(np.sqrt(sum(norm(grid, c, "W2q") ** 2 for c in state.u_plus)))
    out["u_minus_W2"] = float(np.sqrt(sum(norm(grid, c, "W2q") ** 2 for c in state.u_minus)))
    out["theta_W2"] = float(np.hypot(norm(grid, state.theta_plus - material.theta_star, "W2q"),
                                     norm(grid, state.theta_minus - material.theta_star, "W2q")))
    out["rho_W1"] = norm(grid, state.rho_plus - material.rho_star_plus, "W1q")
    return out


def run_report(material: MaterialSystem, grid: Grid, states, options: RhsOptions = RhsOptions()):
    rep = DiagnosticsReport()
    for s in states:
        row = totals(material, grid, s)
        row.update(state_norms(grid, s, material))
        try:
            for name, v in jump_residuals(material, grid, s, 32, options).items():
                row[f"res_{name}"] = v["sup"]
        except ValueError:
            pass
        vp, vm = viscous_production(material, grid, s)
        row["min_viscous_production"] = float(min(vp.min(), vm.min()))
        rep.rows.append(row)
    if len(states) >= 2:
        rep.budgets = conservation_budgets(material, grid, states)
        rep.entropy = entropy_monitor(material, grid, states)
    return rep


def write_report_csv(path, report: DiagnosticsReport):
    if not report.rows:
        return
    keys = list(report.rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in report.rows:
            w.writerow([repr(float(r.get(k, np.nan))) for k in keys])


def summarize(report: DiagnosticsReport) -> dict:
    """Flat key set for the run summary file."""
    out = {}
    if report.rows:
        last = report.rows[-1]
        out["h_sup_max"] = max(r["h_sup"] for r in report.rows)
        for k, v in last.items():
            if k.startswith("res_"):
                out[f"final_{k}"] = v
        out["min_viscous_production"] = min(r["min_viscous_production"] for r in report.rows)
    for k, v in report.budgets.items():
        if isinstance(v, dict):
            out[f"drift_{k}"] = v["drift"]
    return out
