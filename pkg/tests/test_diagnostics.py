import numpy as np
import pytest

from twophase.diagnostics import (conservation_budgets, jump_residuals, reynolds_check,
                                  run_report, state_norms, summarize, surface_area, totals,
                                  viscous_production, write_report_csv)
from twophase.driver import RunConfig, simulate
from twophase.grid import Grid, equilibrium_state

G = Grid(M_tan=16, M_nrm=16, T_final=0.004)


@pytest.fixture(scope="module")
def run():
    cfg = RunConfig(grid=G, epsilon=1e-3)
    return cfg, simulate(cfg)


def _roll(state, s):
    # tangential translation by s nodes
    out = state.copy()
    for name in ("rho_full", "theta_plus", "theta_minus", "pi_minus", "h", "dh_dt"):
        setattr(out, name, np.roll(getattr(state, name), s, axis=0))
    for name in ("u_plus", "u_minus"):
        setattr(out, name, np.roll(getattr(state, name), s, axis=1))
    return out


def test_equilibrium_totals_and_residuals(material):
    st = equilibrium_state(G, material.rho_star_plus, material.theta_star)
    tot = totals(material, G, st)
    assert tot["mass"] == pytest.approx(G.L_tan * G.L_nrm * (material.rho_star_plus
                                                             + material.rho_star_minus))
    for name, v in jump_residuals(material, G, st).items():
        assert v["sup"] < 1e-13, name
    assert surface_area(G, st.h) == pytest.approx(G.L_tan)


def test_jump_residual_detects_broken_temperature(material):
    st = equilibrium_state(G, material.rho_star_plus, material.theta_star)
    st.theta_plus = st.theta_plus.copy()
    st.theta_plus[..., 0] += 1e-3
    res = jump_residuals(material, G, st)
    assert res["temperature"]["sup"] == pytest.approx(1e-3)
    assert res["gibbs_thomson"]["sup"] > 1e-7


def test_unknown_and_inconsistent_cases(material):
    st = equilibrium_state(G, material.rho_star_plus, material.theta_star)
    with pytest.raises(ValueError):
        jump_residuals(material, G, st, case=30)
    with pytest.raises(ValueError):
        jump_residuals(material, G, st, case=33)   # needs equal densities
    res = jump_residuals(material, G, st, case=31)
    assert {"velocity", "heat_flux", "kinematic"} <= set(res)


def test_budgets_translation_invariant(material, run):
    _, res = run
    a = conservation_budgets(material, G, res.states)
    b = conservation_budgets(material, G, [_roll(s, 5) for s in res.states])
    for k in ("mass", "energy", "momentum_1", "momentum_2"):
        assert b[k]["drift"] == pytest.approx(a[k]["drift"], rel=1e-9, abs=1e-14), k


def test_budgets_need_two_states(material, run):
    with pytest.raises(ValueError):
        conservation_budgets(material, G, run[1].states[:1])


def test_run_conserves_mass(material, run):
    assert abs(conservation_budgets(material, G, run[1].states)["mass"]["drift"]) < 1e-6


def test_viscous_production_nonnegative(material, run):
    for s in run[1].states:
        vp, vm = viscous_production(material, G, s)
        assert min(vp.min(), vm.min()) >= -1e-12


def test_reynolds_identity_second_order():
    def err(dt):
        g = Grid(M_tan=64, M_nrm=8)
        h = lambda t: 0.2 * np.cos(g.x_tan) * np.exp(-t) + 0.05 * np.sin(2 * g.x_tan) * t  # noqa: E731
        lhs, rhs = reynolds_check(g, h, 0.3, dt)
        return abs(lhs - rhs)
    e = [err(d) for d in (0.1, 0.05, 0.025)]
    assert np.log2(e[0] / e[1]) == pytest.approx(2, abs=0.2)
    assert e[-1] < 1e-4


def test_state_norms_scale_linearly(material, run):
    cfg, res = run
    half = simulate(RunConfig(grid=G, epsilon=5e-4))
    a, b = state_norms(G, res.states[-1], material), state_norms(G, half.states[-1], material)
    for k in a:
        assert a[k] / b[k] == pytest.approx(2.0, rel=0.01), k


def test_report_and_summary(material, run, tmp_path):
    rep = run_report(material, G, run[1].states)
    assert len(rep.rows) == len(run[1].states)
    assert "mass" in rep.budgets
    write_report_csv(tmp_path / "d.csv", rep)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == len(rep.rows) + 1
    summ = summarize(rep)
    assert summ["h_sup_max"] == pytest.approx(1e-3, rel=0.05)
    assert summ["min_viscous_production"] >= -1e-12
