import numpy as np
import pytest
import sympy as sy
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_defgrad
from hyperfit.continuum import (
    DomainError,
    NeoHookeParams,
    from_voigt,
    fourth_to_voigt,
    invariants,
    kinematics,
    neo_hooke,
    pullback_pseudo_stiffness,
    push_forward,
    stress_transform,
    symmetric_identity,
    to_voigt,
)

P1 = NeoHookeParams(1.0, 0.3)

defgrads = arrays(np.float64, (3, 3), elements=st.floats(-0.35, 0.35)).map(lambda a: np.eye(3) + a).filter(
    lambda F: np.linalg.det(F) > 0.2)


def test_kinematics_identity():
    k = kinematics(np.eye(3))
    assert np.array_equal(k["C"], np.eye(3)) and np.array_equal(k["b"], np.eye(3))
    assert np.allclose(k["E"], 0) and np.allclose(k["e"], 0) and k["J"] == 1.0


def test_kinematics_stretch_two():
    k = kinematics(np.diag([2.0, 1.0, 1.0]))
    assert k["E"][0, 0] == pytest.approx(1.5)
    assert k["e"][0, 0] == pytest.approx(0.375)
    assert k["J"] == pytest.approx(2.0)


@pytest.mark.parametrize("F", [np.zeros((3, 3)), np.diag([-1.0, 1.0, 1.0])])
def test_kinematics_rejects_bad_defgrad(F):
    with pytest.raises(DomainError):
        kinematics(F)


@given(defgrads)
def test_almansi_is_push_forward_of_green(F):
    k = kinematics(F)
    Fi = np.linalg.inv(F)
    assert np.allclose(k["e"], Fi.T @ k["E"] @ Fi, rtol=1e-12, atol=1e-13)


def test_invariants_examples():
    assert np.allclose(invariants(np.eye(3)), [3, 3, 1, -2])
    assert np.allclose(invariants(np.diag([4.0, 1.0, 1.0])), [6, 9, 4, -4])
    with pytest.raises(DomainError):
        invariants(np.diag([1.0, -1.0, 1.0]))


@given(defgrads)
def test_invariant_identities(F):
    C = F.T @ F
    I1, I2, I3, I1s = invariants(C)
    assert I2 == pytest.approx(0.5 * (np.trace(C) ** 2 - np.trace(C @ C)), rel=1e-12)
    cof = I3 * np.linalg.inv(C)
    assert np.linalg.det(cof) == pytest.approx(I3**2, rel=1e-10)
    assert I1s == pytest.approx(-2.0 * np.sqrt(I3))
    assert I1 >= 0 and I2 >= 0 and I3 > 0


def test_stress_transform_examples():
    s = np.diag([1.0, 0.0, 0.0])
    out = stress_transform(s, np.eye(3))
    for key in ("tau", "P", "T"):
        assert np.allclose(out[key], s)
    assert stress_transform(s, np.diag([2.0, 1.0, 1.0]))["T"][0, 0] == pytest.approx(0.5)


@given(defgrads, arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
def test_stress_round_trip(F, a):
    sigma = a + a.T
    out = stress_transform(sigma, F)
    J = np.linalg.det(F)
    assert np.allclose(out["T"], J * np.linalg.inv(F) @ sigma @ np.linalg.inv(F).T, rtol=1e-12, atol=1e-12)
    assert np.allclose(push_forward(out["T"], F), sigma, rtol=1e-12, atol=1e-12)


def test_lame_parameters():
    assert P1.mu == pytest.approx(0.384615384615, rel=1e-10)
    assert P1.lam == pytest.approx(0.576923076923, rel=1e-10)
    with pytest.raises(ValueError):
        NeoHookeParams(-1.0, 0.3)
    with pytest.raises(ValueError):
        NeoHookeParams(1.0, 0.5)


def test_neo_hooke_reference_state():
    out = neo_hooke(np.eye(3), NeoHookeParams(3.7, 0.12))
    assert out["psi"] == 0.0
    assert np.allclose(out["T"], 0, atol=1e-15) and np.allclose(out["sigma"], 0, atol=1e-15)


def _sympy_P():
    F = sy.Matrix(3, 3, lambda i, j: sy.Symbol(f"F{i}{j}"))
    mu, lam = sy.symbols("mu lam", positive=True)
    C = F.T * F
    I3 = C.det()
    psi = sy.Rational(1, 2) * (mu * (C.trace() - sy.log(I3) - 3) + lam / 2 * (I3 - sy.log(I3) - 1))
    P = sy.Matrix(3, 3, lambda i, j: sy.diff(psi, F[i, j]))
    return sy.lambdify((list(F), mu, lam), P, "numpy")


def test_uniaxial_curve_against_symbolic_derivative():
    fP = _sympy_P()
    from scipy.optimize import brentq

    for lam1 in np.linspace(0.7, 2.0, 27):
        # lateral stretch from the symbolic lateral stress (independent of the implementation)
        t = brentq(lambda t: np.array(fP([lam1, 0, 0, 0, t, 0, 0, 0, t], P1.mu, P1.lam))[1, 1], 0.2, 2.0,
                   xtol=1e-15)
        F = np.diag([lam1, t, t])
        ref = np.array(fP(list(F.ravel()), P1.mu, P1.lam), dtype=float)
        got = neo_hooke(F, P1)["P"]
        assert np.allclose(got, ref, rtol=1e-10, atol=1e-10)


@given(defgrads)
def test_neo_hooke_stress_is_energy_derivative(F):
    h = 1e-6
    P = neo_hooke(F, P1)["P"]
    fd = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] = h
            fd[i, j] = (neo_hooke(F + d, P1)["psi"] - neo_hooke(F - d, P1)["psi"]) / (2 * h)
    assert np.linalg.norm(fd - P) <= 1e-6 * max(np.linalg.norm(P), 1e-3)


@given(defgrads)
def test_neo_hooke_energy_nonnegative(F):
    assert neo_hooke(F, P1)["psi"] >= -1e-14


def test_pullback_identity_is_constant_variant():
    A = pullback_pseudo_stiffness(2.5, np.eye(3))
    assert np.array_equal(A, 2.5 * symmetric_identity())
    assert np.array_equal(fourth_to_voigt(A), np.diag([2.5, 2.5, 2.5, 1.25, 1.25, 1.25]))


def test_pullback_component():
    A = pullback_pseudo_stiffness(3.0, np.diag([2.0, 1.0, 1.0]))
    assert A[0, 0, 0, 0] == pytest.approx(2 * 3.0 / 16)


def test_pullback_symmetry_and_definiteness(rng):
    for _ in range(50):
        F = random_defgrad(rng)
        A = pullback_pseudo_stiffness(1.7, F)
        assert np.allclose(A, A.transpose(1, 0, 2, 3)) and np.allclose(A, A.transpose(2, 3, 0, 1))
        e = rng.normal(size=(3, 3))
        e = e + e.T
        assert np.einsum("ij,ijkl,kl->", e, A, e) >= 0


def test_voigt_round_trip(rng):
    a = rng.normal(size=(3, 3))
    a = a + a.T
    assert np.array_equal(from_voigt(to_voigt(a)), a)
