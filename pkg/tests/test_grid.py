import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twophase.grid import (Grid, Ops, d_normal, d_normal2, d_normal_hi, d_tan, equilibrium_state,
                           from_modes, integrate, interface_trace, jump, norm, read_binary,
                           to_modes, write_binary, write_csv)

G = Grid(M_tan=16, M_nrm=16)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
strip = arrays(np.float64, G.shape, elements=finite)


@pytest.mark.parametrize("kw", [dict(M_tan=12), dict(M_tan=4), dict(M_nrm=4), dict(N=4),
                                dict(dt=0.0), dict(L_nrm=-1.0)])
def test_grid_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        Grid(**kw)


def test_shapes_and_spacing():
    g = Grid(N=3, M_tan=8, M_nrm=10, L_nrm=5.0)
    assert g.shape == (8, 8, 11)
    assert g.full_shape == (8, 8, 21)
    assert g.dz == 0.5
    assert g.z_upper[0] == 0.0 and g.z_lower[-1] == 0.0


@given(f=strip)
def test_mode_round_trip(f):
    back = from_modes(G, to_modes(G, f))
    assert np.max(np.abs(back - f)) <= 1e-12 * max(1.0, np.max(np.abs(f)))


@given(f=strip)
def test_parseval(f):
    F = to_modes(G, f)
    lhs = np.sum(f**2) / G.M_tan
    rhs = np.sum(np.abs(F) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@given(f=strip, g=strip, a=finite, b=finite)
def test_trace_linearity(f, g, a, b):
    for side in ("plus", "minus"):
        assert np.array_equal(interface_trace(a * f + b * g, side),
                              a * interface_trace(f, side) + b * interface_trace(g, side))


def test_jump_sign():
    fm, fp = np.full(G.shape, 3.0), np.full(G.shape, 1.0)
    assert np.all(jump(fm, fp) == 2.0)


@given(f=strip)
def test_norm_monotone(f):
    assert norm(G, f, "Lq") <= norm(G, f, "W1q") + 1e-12
    assert norm(G, f, "W1q") <= norm(G, f, "W2q") + 1e-12


def test_spectral_tangential_derivative():
    g = Grid(M_tan=32, M_nrm=8)
    X, _ = g.coords("plus")
    f = np.sin(3 * X)
    assert np.max(np.abs(d_tan(g, f, 0) - 3 * np.cos(3 * X))) < 1e-12
    assert np.max(np.abs(d_tan(g, f, 0, order=2) + 9 * np.sin(3 * X))) < 1e-11


@pytest.mark.parametrize("op,order,exact", [(d_normal, 2, np.cos), (d_normal_hi, 4, np.cos),
                                            (d_normal2, 2, lambda z: -np.sin(z))])
def test_normal_difference_orders(op, order, exact):
    errs = []
    for M in (32, 64):
        z = np.linspace(0, 2, M + 1)
        errs.append(np.max(np.abs(op(np.sin(z), z[1] - z[0]) - exact(z))))
    observed = np.log2(errs[0] / errs[1])
    assert observed == pytest.approx(order, abs=0.35)


def test_integrate_exact_on_linear_profiles():
    z = G.z_upper
    f = np.broadcast_to(2 + z, G.shape)
    L = G.L_nrm
    assert integrate(G, f) == pytest.approx(G.L_tan * (2 * L + L**2 / 2), rel=1e-12)


def test_ops_high_order_flag():
    g = Grid(M_tan=8, M_nrm=32)
    _, Z = g.coords("plus")
    f = np.sin(Z)
    e2 = np.max(np.abs(Ops(g).dn(f) - np.cos(Z)))
    e4 = np.max(np.abs(Ops(g, high_order=True).dn(f) - np.cos(Z)))
    assert e4 < e2 / 10


def test_snapshot_round_trip(tmp_path, rng):
    st_ = equilibrium_state(G, 1.0, 1.0)
    st_.u_plus = rng.standard_normal(st_.u_plus.shape)
    st_.h = rng.standard_normal(G.tan_shape)
    st_.t = 0.25
    write_binary(tmp_path / "s.bin", st_)
    head, fields, h = read_binary(tmp_path / "s.bin")
    assert head["t"] == 0.25 and head["M_tan"] == 16
    assert np.array_equal(fields["u1_plus"][1], st_.u_plus[0])
    assert np.array_equal(h, st_.h)
    write_csv(tmp_path / "s.csv", st_)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * G.M_tan * (G.M_nrm + 1)


def test_state_check_rejects_bad_density():
    st_ = equilibrium_state(G, 1.0, 1.0)
    st_.rho_full[..., -1] = -1.0
    with pytest.raises(FloatingPointError):
        st_.check()
