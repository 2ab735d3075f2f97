"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary under "acceptance criteria".
"""
import numpy as np
import pytest

from oracles import StokesMMS, TwoLayerMode, quadratic_flow
from twophase import _pykernels, diagnostics, kernels, rhs
from twophase.driver import RunConfig, Stepper, initialize, simulate
from twophase.geometry import chain_rule_pullback, divergence_transforms, extend_height
from twophase.grid import Grid, Ops, equilibrium_state
from twophase.linear import (HeatSolver, StokesData, resolvent_sweep, solve_stokes_resolvent,
                             stokes_time_step)
from twophase.transport import advect_flow, density_update, lions_extend

BACKENDS = [_pykernels] + ([kernels._ckernels] if kernels._ckernels is not None else [])
FIELDS = ("u_plus", "u_minus", "theta_plus", "theta_minus", "h", "rho_full", "pi_minus")


def _lsq_order(Ms, errs):
    return -np.polyfit(np.log2(Ms), np.log2(errs), 1)[0]


@pytest.fixture(scope="module")
def small_data_runs():
    """Compatible-bump runs on 32 x 32 to the full horizon (about 15 s each)."""
    out = {}
    for eps in (5e-4, 1e-3):
        cfg = RunConfig(grid=Grid(M_tan=32, M_nrm=32), epsilon=eps)
        out[eps] = (cfg, simulate(cfg))
    return out


# 1 ------------------------------------------------------------------------------------

def test_equilibrium_annihilation(material, verdict):
    g = Grid(M_tan=32, M_nrm=32)
    st = equilibrium_state(g, material.rho_star_plus, material.theta_star)
    eh = extend_height(g, st.h, st.dh_dt)
    bundle = rhs.assemble(material, g, st, eh, prev=st, dt=g.dt)
    r_rhs = max(float(np.max(np.abs(a))) for a in bundle.arrays().values())
    r_cmp = max(v["sup"] for v in rhs.compatibility_residual(material, g, st, eh).values())
    r_jmp = max(v["sup"] for v in diagnostics.jump_residuals(material, g, st).values())
    res = simulate(RunConfig(grid=Grid(M_tan=32, M_nrm=32, T_final=0.1), epsilon=0.0))
    steps = len(res.traces)
    drift = max(float(np.max(np.abs(getattr(s, f) - getattr(st, f))))
                for s in res.states for f in FIELDS)
    ok = (max(r_rhs, r_cmp, r_jmp) <= 1e-12 and res.termination.completed and steps == 100
          and drift <= 1e-10)
    assert verdict("1 equilibrium", ok,
                   f"rhs {r_rhs:.1e}, compat {r_cmp:.1e}, jumps {r_jmp:.1e}; "
                   f"{steps} steps, max field deviation {drift:.1e} (tol 1e-10)")


# 2 ------------------------------------------------------------------------------------

def test_transform_fidelity(verdict):
    g = Grid(M_tan=256, M_nrm=256)
    eh = extend_height(g, 0.1 * np.cos(g.x_tan) + 0.05 * np.sin(2 * g.x_tan))
    ops = Ops(g, high_order=True)
    e = lambda Y, c: np.exp(-Y**2 / c)  # noqa: E731
    f = lambda X, Y: np.sin(X) * e(Y, 4) + 0.3 * np.cos(2 * X) * Y * e(Y, 8)  # noqa: E731
    fx = lambda X, Y: np.cos(X) * e(Y, 4) - 0.6 * np.sin(2 * X) * Y * e(Y, 8)  # noqa: E731
    fy = lambda X, Y: -Y / 2 * np.sin(X) * e(Y, 4) + 0.3 * np.cos(2 * X) * (1 - Y**2 / 4) * e(Y, 8)  # noqa: E731,E501
    fxy = lambda X, Y: -Y / 2 * np.cos(X) * e(Y, 4) - 0.6 * np.sin(2 * X) * (1 - Y**2 / 4) * e(Y, 8)  # noqa: E731,E501
    grad_err = div_err = form_err = qq = 0.0
    for side in ("plus", "minus"):
        X, Z = g.coords(side)
        Y = Z + eh.H[side]       # physical normal coordinate of each node
        grad, _ = chain_rule_pullback(ops, f(X, Y), eh, side)
        ex = np.stack([fx(X, Y), fy(X, Y)])
        grad_err = max(grad_err, np.max(np.abs(grad - ex)) / np.max(np.abs(ex)))
        dv = divergence_transforms(ops, np.stack([f(X, Y), fx(X, Y)]), eh, side)
        div_ex = fx(X, Y) + fxy(X, Y)
        scale = np.max(np.abs(div_ex))
        form_err = max(form_err, dv.max_disagreement / scale)
        div_err = max(div_err, np.max(np.abs(dv.form_direct - div_ex)) / scale)
        prod = np.einsum("ab...,bc...->ac...", eh.Q(side), eh.Q_inv(side))
        qq = max(qq, float(np.max(np.abs(prod - np.eye(2).reshape(2, 2, 1, 1)))))
    ok = max(grad_err, div_err, form_err) < 1e-4 and qq <= 1e-13
    assert verdict("2 transforms", ok,
                   f"256^2: gradient rel {grad_err:.1e}, divergence rel {div_err:.1e}, "
                   f"forms disagree {form_err:.1e} (tol 1e-4); |Q Q^-1 - I| {qq:.1e}")


# 3 ------------------------------------------------------------------------------------

def test_density_formula(verdict):
    g = Grid(M_tan=64, M_nrm=64)
    X, Z = g.coords("full")
    env = np.exp(-Z**2 / 4)
    v = np.stack([0.1 * np.cos(X) * env, 0.1 * np.sin(X) * env])
    rate = 0.05 * np.cos(X) * env
    rho0 = 1 + 0.1 * np.cos(X) * np.exp(-Z**2 / 8)
    T = 0.02
    flow = advect_flow(g, v, v, rate, rate, T)
    r1 = density_update(g, rho0, flow)
    r2 = density_update(g, r1, flow)
    ops = Ops(g, high_order=True)
    # centred-in-time residual of  rho_t + v . grad rho + rate rho = 0
    pde = (r2 - rho0) / (2 * T) + v[0] * ops.d(r1, 0) + v[1] * ops.dn(r1) + rate * r1
    pde_res = float(np.max(np.abs(pde)))

    gq = Grid(M_tan=16, M_nrm=32)
    Xq, Zq = gq.coords("full")
    vel = np.stack([np.full_like(Xq, 0.3), 0.5 * Zq**2])
    _, exact, integral = quadratic_flow()
    p0 = np.stack([np.linspace(0, 6, 9), np.linspace(-1, 1, 9)])
    ratios = []
    for mod in BACKENDS:
        errs = []
        for nsub in (8, 16, 32, 64):
            p, A = mod.rk4_paths(p0, vel, vel, Zq**3, Zq**3, gq.dx, -gq.L_nrm, gq.dz, 1.0, nsub,
                                 False)
            errs.append(max(np.max(np.abs(p - exact(p0, 1.0))),
                            np.max(np.abs(A - integral(p0, 1.0)))))
        ratios += list(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = pde_res < 1e-5 and all(10 <= r <= 22 for r in ratios)
    assert verdict("3 density", ok,
                   f"PDE residual {pde_res:.1e} at 64^2 (tol 1e-5); RK4 halving ratios "
                   f"{min(ratios):.1f}..{max(ratios):.1f} over {len(BACKENDS)} backend(s)")


# 4 ------------------------------------------------------------------------------------

def test_linear_stokes(material, verdict, rng):
    mms = StokesMMS(material)
    errs, resid = {}, 0.0
    for M in (32, 64, 128):
        g = Grid(M_tan=16, M_nrm=M)
        sol = solve_stokes_resolvent(material, g, mms.lam, mms.data(g))
        errs[M] = mms.errors(g, sol)
        resid = max(resid, sol.residual)
    orders = {k: np.log2(errs[64][k] / errs[128][k]) for k in errs[32]}

    g = Grid(M_tan=16, M_nrm=16)
    X, Z = g.coords("plus")
    d = StokesData.zeros(g)
    for a in range(g.N):
        d.f_plus[a] = np.cos(X + a) * np.exp(-Z**2)
        d.f_minus[a] = np.sin(X - a) * np.exp(-Z**2)[..., ::-1]
    d.g[:] = rng.standard_normal((g.N + 1, 1)) * np.cos(g.x_tan)
    d.d[:] = 0.3 * np.sin(g.x_tan)
    u_p = np.stack([np.cos(X + c) * np.exp(-Z**2) for c in (0.2, 1.1)])
    u_p[..., 0] = u_p[..., -1] = 0.0
    u_m = u_p[..., ::-1].copy()
    H = 0.1 * np.cos(g.x_tan)
    step = stokes_time_step(material, g, u_p, u_m, H, d, g.dt)
    shifted = StokesData(d.f_plus + material.rho_star_plus * u_p / g.dt,
                         d.f_minus + material.rho_star_minus * u_m / g.dt,
                         d.f_div, d.g, d.h, d.d + H / g.dt)
    ref = solve_stokes_resolvent(material, g, 1 / g.dt, shifted)
    equiv = max(np.max(np.abs(getattr(step, f) - getattr(ref, f)))
                / max(1.0, np.max(np.abs(getattr(ref, f))))
                for f in ("u_plus", "u_minus", "pi_minus", "H"))

    recs = resolvent_sweep(material, Grid(M_tan=16, M_nrm=32), lambda0=1.0, eps=0.1, decades=3)
    cond = max(r.condition for r in recs)
    mags = [abs(r.lam) for r in recs]
    args = max(abs(np.angle(r.lam)) for r in recs)
    ok = (all(abs(o - 2) <= 0.3 for o in orders.values()) and resid < 1e-10 and equiv <= 1e-12
          and cond < 1e8 and args <= np.pi - 0.1 + 1e-12
          and min(mags) >= 1 - 1e-12 and max(mags) <= 1e3 * (1 + 1e-12))
    order_txt = ", ".join(f"{k} {v:.2f}" for k, v in orders.items())
    assert verdict("4 Stokes", ok,
                   f"orders {order_txt}; residual {resid:.1e}; step/resolvent {equiv:.1e}; "
                   f"sweep max condition {cond:.1e} over {len(recs)} blocks")


# 5 ------------------------------------------------------------------------------------

def test_heat_solver(material, verdict, rng):
    mode = TwoLayerMode(material)
    g = Grid(M_tan=16, M_nrm=64, dt=1e-3)
    Xp, Zp = g.coords("plus")
    Xm, Zm = g.coords("minus")
    tp, tm = mode.plus(Xp, Zp, 0.0), mode.minus(Xm, Zm, 0.0)
    hs = HeatSolver(material, g)
    z, zg = np.zeros(g.shape), np.zeros(g.tan_shape)
    flux = 0.0
    for _ in range(100):
        s = hs.time_step(tm, tp, z, z, zg, g.dt)
        tp, tm = s.theta_plus, s.theta_minus
        flux = max(flux, s.flux_row_residual)
    ex_p, ex_m = mode.plus(Xp, Zp, 0.1), mode.minus(Xm, Zm, 0.1)
    scale = max(np.max(np.abs(ex_p)), np.max(np.abs(ex_m)))
    mode_err = max(np.max(np.abs(tp - ex_p)), np.max(np.abs(tm - ex_m))) / scale

    # x-independent data: pointwise bound; general data: per-mode amplitude bound
    excess = 0.0
    for trial in range(20):
        a, b = rng.standard_normal((2, g.M_nrm + 1))
        a[0] = b[-1] = 0.0
        b[0] = a[-1]
        tm0 = np.broadcast_to(a, g.shape).copy()
        tp0 = np.broadcast_to(b, g.shape).copy()
        s = hs.time_step(tm0, tp0, z, z, zg, 10.0 ** rng.uniform(-3, 0))
        old = np.concatenate([tm0, tp0], -1)
        new = np.concatenate([s.theta_minus, s.theta_plus], -1)
        excess = max(excess, new.max() - max(old.max(), 0.0), min(old.min(), 0.0) - new.min())
        flux = max(flux, s.flux_row_residual)
        tm1, tp1 = rng.standard_normal((2,) + g.shape)
        tm1[..., 0] = tp1[..., -1] = 0.0
        tp1[..., 0] = tm1[..., -1]
        s = hs.time_step(tm1, tp1, z, z, zg, 10.0 ** rng.uniform(-3, 0))
        amp_old = np.concatenate([g.rfft(tm1)[..., :-1], g.rfft(tp1)], -1)
        amp_new = np.concatenate([g.rfft(s.theta_minus)[..., :-1], g.rfft(s.theta_plus)], -1)
        for part in (np.real, np.imag):
            excess = max(excess, float(np.max(np.max(np.abs(part(amp_new)), -1)
                                              - np.max(np.abs(part(amp_old)), -1))))
    ok = mode_err < 0.01 and excess <= 1e-10 and flux < 1e-10
    assert verdict("5 heat", ok,
                   f"two-layer mode rel error {mode_err:.1e} at t=0.1 (tol 1e-2); "
                   f"max-principle excess {excess:.1e}; flux row {flux:.1e}")


# 6 ------------------------------------------------------------------------------------

def test_small_data_contraction(small_data_runs, verdict):
    lines, ok = [], True
    norms = {}
    for eps, (cfg, res) in small_data_runs.items():
        its = max(tr.iterations for tr in res.traces)
        ratio = max(max(tr.ratios) for tr in res.traces)
        done = res.termination.completed and res.states[-1].t == pytest.approx(0.1)
        ok &= done and its <= 10 and ratio < 0.5
        lines.append(f"eps {eps:g}: t={res.states[-1].t:.3g}, <= {its} its, ratio {ratio:.1e}")
        norms[eps] = diagnostics.state_norms(cfg.grid, res.states[-1], cfg.material)
    scal = {k: norms[1e-3][k] / norms[5e-4][k] for k in norms[1e-3]}
    worst = max(abs(r / 2 - 1) for r in scal.values())
    ok &= worst < 0.1
    big = simulate(RunConfig(grid=Grid(M_tan=32, M_nrm=32), epsilon=0.5)).termination
    ok &= (not big.completed) and big.reason.startswith(("gate", "contraction"))
    assert verdict("6 small data", ok,
                   "; ".join(lines) + f"; norm scaling off by {worst:.1e} (tol 0.1); "
                   f"eps 0.5 -> {big.reason}")


# 7 ------------------------------------------------------------------------------------

def test_physics_budgets(small_data_runs, verdict):
    drift, visc, law = 0.0, np.inf, 0.0
    for cfg, res in small_data_runs.values():
        b = diagnostics.conservation_budgets(cfg.material, cfg.grid, res.states)
        drift = max(drift, abs(b["mass"]["drift"]))
        for s in res.states:
            vp, vm = diagnostics.viscous_production(cfg.material, cfg.grid, s)
            visc = min(visc, float(vp.min()), float(vm.min()))
        jr = diagnostics.jump_residuals(cfg.material, cfg.grid, res.states[-1])
        law = max(law, jr["stefan"]["sup"], jr["gibbs_thomson"]["sup"])

    Ms, st_e, gt_e = (32, 64, 128), [], []
    for M in Ms:
        cfg = RunConfig(grid=Grid(M_tan=32, M_nrm=M), epsilon=1e-3)
        s, stepper = initialize(cfg), Stepper(cfg)
        for n in range(20):
            s, _ = stepper.advance(s, cfg.grid.dt, n + 1)
        jr = diagnostics.jump_residuals(cfg.material, cfg.grid, s)
        st_e.append(jr["stefan"]["sup"])
        gt_e.append(jr["gibbs_thomson"]["sup"])
    o_st, o_gt = _lsq_order(Ms, st_e), _lsq_order(Ms, gt_e)
    ok = (drift < 1e-6 and visc >= -1e-12 and law < 1e-4 and max(st_e + gt_e) < 1e-4
          and o_st >= 1 and o_gt >= 1)
    assert verdict("7 budgets", ok,
                   f"mass drift {drift:.1e}/time (tol 1e-6); min viscous production {visc:.1e}; "
                   f"Stefan/GT at T {law:.1e}; refinement orders Stefan {o_st:.2f}, "
                   f"GT {o_gt:.2f}")


# 8 ------------------------------------------------------------------------------------

def test_algebraic_identities(material, verdict, rng):
    rm, rp = material.rho_star_minus, material.rho_star_plus
    split = flux = 0.0
    for _ in range(200):
        GN, GN1, lap, unp, dun = rng.uniform(-5, 5, (5, 64))
        Tm, Tp = rhs.traction_split(material, GN, GN1, lap)
        s1 = np.max(np.abs(Tm - Tp - material.sigma * lap - GN))
        s2 = np.max(np.abs(Tm / rm - Tp / rp - GN1))
        split = max(split, s1 / (1 + np.max(np.abs(GN)) + np.max(np.abs(lap))),
                    s2 / (1 + np.max(np.abs(GN1)) + np.max(np.abs(GN))))
        rho = rng.uniform(0.5, 1.5, 64)
        j1 = rhs.phase_flux_from_normal_jump(dun, 1 / rm - 1 / rho)
        j2 = rhs.phase_flux_from_mass_balance(rm, rho, unp + dun, unp)
        flux = max(flux, np.max(np.abs(j1 - j2)) / (1 + np.max(np.abs(j1))))

    # the reflected branch has a large third derivative: M = 32 is pre-asymptotic
    Ms, value_gap, slope_gap = (64, 128, 256), [], []
    for M in Ms:
        g = Grid(M_tan=8, M_nrm=M)
        zu = g.z_upper
        ext = lions_extend(g, np.broadcast_to(np.exp(-zu) * np.cos(zu), g.shape))[0]
        dz = g.dz
        lo = (3 * ext[M] - 4 * ext[M - 1] + ext[M - 2]) / (2 * dz)
        hi = (-3 * ext[M] + 4 * ext[M + 1] - ext[M + 2]) / (2 * dz)
        value_gap.append(abs(ext[M] - 1.0))
        slope_gap.append(abs(lo - hi))
    order = _lsq_order(Ms, slope_gap)
    ok = split <= 1e-13 and flux <= 1e-12 and max(value_gap) == 0.0 and order >= 1.7
    assert verdict("8 identities", ok,
                   f"traction split {split:.1e} (tol 1e-13); phase flux {flux:.1e} (tol 1e-12); "
                   f"extension slope gap {slope_gap[-1]:.1e} at order {order:.2f}")
