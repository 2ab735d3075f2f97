import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twophase.geometry import (chain_rule_pullback, divergence_transforms, extend_height,
                               f_minus, ff_minus, helmholtz_residual, mean_curvature,
                               normal_and_curvature, transform_gate)
from twophase.grid import Grid, Ops

G = Grid(M_tan=32, M_nrm=32)
coef = st.floats(-0.1, 0.1)


def _h(grid, a, b, c=0.0):
    x = grid.x_tan
    return a * np.cos(x) + b * np.sin(2 * x) + c * np.cos(3 * x)


def test_zero_height_is_identity():
    eh = extend_height(G, np.zeros(G.tan_shape))
    assert eh.gate == 1.0
    for side in ("plus", "minus"):
        assert np.all(eh.H[side] == 0) and np.all(eh.K[side] == 0)


@given(a=coef, b=coef, c=coef, s=st.floats(-2, 2))
def test_extension_is_linear(a, b, c, s):
    h1, h2 = _h(G, a, b), _h(G, c, a)
    e = extend_height(G, s * h1 + h2)
    e1, e2 = extend_height(G, h1), extend_height(G, h2)
    for side in ("plus", "minus"):
        assert np.allclose(e.H[side], s * e1.H[side] + e2.H[side], atol=1e-14)
        assert np.allclose(e.dH[side], s * e1.dH[side] + e2.dH[side], atol=1e-13)


@given(a=coef, b=coef, c=coef)
def test_extension_trace_and_helmholtz(a, b, c):
    h = _h(G, a, b, c)
    eh = extend_height(G, h)
    assert np.allclose(eh.H["plus"][..., 0], h, atol=1e-14)
    assert np.allclose(eh.H["minus"][..., -1], h, atol=1e-14)
    for side in ("plus", "minus"):
        assert helmholtz_residual(eh, side) < 1e-12


@given(a=coef, b=coef, c=coef)
def test_Q_inverse(a, b, c):
    eh = extend_height(G, _h(G, a, b, c))
    for side in ("plus", "minus"):
        prod = np.einsum("ab...,bc...->ac...", eh.Q(side), eh.Q_inv(side))
        eye = np.eye(2).reshape(2, 2, 1, 1)
        assert np.max(np.abs(prod - eye)) < 1e-13


def test_gate_is_continuous_in_amplitude():
    gates = [extend_height(G, _h(G, a, 0)).gate for a in np.linspace(0, 0.2, 21)]
    assert gates[0] == 1.0
    assert np.all(np.abs(np.diff(gates)) < 0.02)
    # 1 - sqrt(2) a for a single cosine mode
    assert gates[-1] == pytest.approx(1 - np.sqrt(2) * 0.2, rel=1e-12)
    assert transform_gate(extend_height(G, _h(G, 0.5, 0)), 0.5) is False


def _pullback_error(M):
    g = Grid(M_tan=32, M_nrm=M)
    eh = extend_height(g, _h(g, 0.1, 0.05))
    ops = Ops(g)
    err = 0.0
    for side in ("plus", "minus"):
        X, Z = g.coords(side)
        Y = Z + eh.H[side]
        f = np.sin(X) * np.exp(-Y**2 / 4)
        ex = np.stack([np.cos(X) * np.exp(-Y**2 / 4), -Y / 2 * np.sin(X) * np.exp(-Y**2 / 4)])
        grad, _ = chain_rule_pullback(ops, f, eh, side)
        err = max(err, np.max(np.abs(grad - ex)))
    return err


def test_pullback_second_order_in_normal_direction():
    e = [_pullback_error(M) for M in (32, 64, 128)]
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(np.abs(orders - 2) < 0.3)


def test_divergence_forms_consistent_to_second_order():
    dis = []
    for M in (32, 64, 128):
        g = Grid(M_tan=32, M_nrm=M)
        eh = extend_height(g, _h(g, 0.1, 0.05))
        ops = Ops(g)
        X, Z = g.coords("plus")
        u = np.stack([np.sin(X) * np.exp(-Z**2), np.cos(X) * Z * np.exp(-Z**2)])
        dis.append(divergence_transforms(ops, u, eh, "plus").max_disagreement)
        fm = f_minus(ops, u, eh, "plus")
        assert np.max(np.abs(fm - ops.div(ff_minus(u, eh, "plus")))) < 10 * g.dz**2
    assert np.log2(dis[1] / dis[2]) > 1.7


def test_curvature_variants_agree_at_linear_order():
    g = Grid(M_tan=64, M_nrm=8)
    for a in (1e-2, 1e-3):
        h = _h(g, a, 0)
        lap = -a * np.cos(g.x_tan)
        for variant in ("printed", "classical"):
            k = mean_curvature(g, h, variant)
            assert np.max(np.abs(k - lap)) < 5 * a**3
    with pytest.raises(ValueError):
        mean_curvature(g, h, "other")


def test_unit_normal():
    g = Grid(M_tan=32, M_nrm=8)
    n, _ = normal_and_curvature(g, _h(g, 0.3, 0.1))
    assert np.allclose(np.sum(n**2, axis=0), 1.0, atol=1e-14)
    assert np.all(n[-1] > 0)
