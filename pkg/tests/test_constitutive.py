import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twophase.constitutive import (ClosureError, MaterialSystem, entropy_production_density,
                                   equilibrium_residual, make_closure, stress,
                                   thermo_consistency, validate)

pos = st.floats(0.5, 2.0)


def test_default_material_is_in_equilibrium(material):
    # psi_-(1) - psi_+(1, 1) + (1/2 - 1) * P_+(1, 1) = 0.5 - 0 - 0.5
    assert equilibrium_residual(material) == pytest.approx(0.0, abs=1e-15)


def test_default_material_validates(material):
    rep = validate(material)
    assert rep.passed
    assert thermo_consistency(material).passed


def test_starred_coefficients(material):
    st_ = material.starred
    assert st_["P_plus"] == pytest.approx(1.0)
    assert all(st_[k] == 1.0 for k in ("mu_plus", "lambda_plus", "mu_minus", "d_plus", "d_minus"))


def test_surface_tension_split(material):
    # sigma_- - sigma_+ = sigma and sigma_-/rho_- = sigma_+/rho_+
    assert material.sigma_minus - material.sigma_plus == pytest.approx(material.sigma)
    assert (material.sigma_minus / material.rho_star_minus
            == pytest.approx(material.sigma_plus / material.rho_star_plus))


@given(c=st.floats(-10, 10))
def test_equilibrium_residual_invariant_under_common_shift(c):
    base = MaterialSystem(closures={"psi_minus": "expr -theta*log(theta) + 0.3*theta"})
    shifted = MaterialSystem(closures={
        "psi_minus": f"expr -theta*log(theta) + 0.3*theta + ({c!r})",
        "psi_plus": f"expr theta*log(rho) - theta*log(theta) + ({c!r})"})
    assert equilibrium_residual(shifted) == pytest.approx(equilibrium_residual(base), abs=1e-12)


def test_equilibrium_shift_enforces_identity():
    m = MaterialSystem(closures={"psi_minus": "expr -theta*log(theta) + 0.9*theta"})
    assert abs(equilibrium_residual(m)) > 0.1
    assert abs(equilibrium_residual(m.with_equilibrium_shift())) < 1e-14


def test_validate_flags_viscosity_bound():
    m = MaterialSystem(closures={"lambda_plus": "constant -0.5"})
    rep = validate(m)
    assert not rep.passed
    assert not rep["positive lambda_plus"].passed


def test_validate_flags_equal_densities():
    rep = validate(MaterialSystem(rho_star_plus=1.0, rho_star_minus=1.0))
    assert not rep["distinct densities"].passed


@pytest.mark.parametrize("spec,phase,args,value", [
    ("constant 2.5", "plus", (3.0, 4.0), 2.5),
    ("affine a=1 b=2 c=3", "plus", (1.0, 1.0), 6.0),
    ("affine a=1 c=3", "minus", (2.0,), 7.0),
    ("ideal_gas R=2", "plus", (1.5, 2.0), 6.0),
    ("expr rho*theta**2", "plus", (2.0, 3.0), 18.0),
])
def test_closure_specs(spec, phase, args, value):
    assert float(make_closure(spec, phase)(*args)) == pytest.approx(value)


@pytest.mark.parametrize("spec,phase", [("", "plus"), ("nope 1", "plus"),
                                        ("ideal_gas R=1", "minus"), ("constant x", "plus")])
def test_bad_closure_specs(spec, phase):
    with pytest.raises(ClosureError):
        make_closure(spec, phase)


def test_table_closure(tmp_path):
    path = tmp_path / "mu.csv"
    t = np.linspace(0.5, 2.0, 8)
    np.savetxt(path, np.column_stack([t, 1 + t**2]), delimiter=",")
    clo = make_closure(f"table {path}", "minus")
    assert float(clo(1.2)) == pytest.approx(1 + 1.2**2, rel=1e-3)


@given(r=pos, t=pos, a=st.floats(-1, 1), b=st.floats(-1, 1), c=st.floats(-1, 1),
       dv=st.floats(-1, 1))
def test_entropy_production_nonnegative_when_valid(material, r, t, a, b, c, dv):
    D = np.array([[a, b], [b, c]])
    mu, lam = material.mu_plus(r, t), material.lambda_plus(r, t)
    assert entropy_production_density(mu, lam, D, dv) >= -1e-14


@given(s=st.floats(-3, 3), a=st.floats(-1, 1), b=st.floats(-1, 1), p=st.floats(-1, 1))
def test_stress_is_linear(material, s, a, b, p):
    D = np.array([[a, b], [b, -a]])
    S1 = stress(material, "plus", D, a, p, variant="starred")
    S2 = stress(material, "plus", s * D, s * a, s * p, variant="starred")
    assert np.allclose(S2, s * S1, atol=1e-12)


def test_stress_rejects_asymmetric(material):
    with pytest.raises(ValueError):
        stress(material, "minus", np.array([[0.0, 1.0], [0.0, 0.0]]), 0.0, 0.0)
