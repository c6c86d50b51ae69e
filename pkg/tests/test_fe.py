import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq, fsolve

from hyperfit.continuum import DomainError, NeoHookeParams, invariants, neo_hooke
from hyperfit.fe import (
    LoadProgram,
    export_raw_data,
    internal_forces,
    plane_stress_lambda3,
    plane_stress_response,
    solve_forward,
    strain_energy,
)
from hyperfit.mesh import Ellipse, generate_plate_mesh, project_thickness_to_quadpoints
from hyperfit.rawdata import read_dataset, write_dataset

P1 = NeoHookeParams(1.0, 0.3)


def embed(F2, lam3):
    F = np.eye(3)
    F[:2, :2] = F2
    F[2, 2] = lam3
    return F


def test_lambda3_examples():
    assert plane_stress_lambda3(np.eye(2), P1) == 1.0
    assert plane_stress_lambda3(np.diag([1.4, 1.0]), NeoHookeParams(2.0, 0.0)) == 1.0
    with pytest.raises(DomainError):
        plane_stress_lambda3(np.diag([1.0, -1.0]), P1)


@pytest.mark.parametrize("lam", [0.7, 0.95, 1.2, 1.6])
def test_lambda3_equibiaxial_against_bisection(lam):
    # out-of-plane Cauchy stress of the 3D law, solved by bisection
    s33 = lambda t: neo_hooke(np.diag([lam, lam, t]), P1)["sigma"][2, 2]
    ref = brentq(s33, 0.2, 3.0, xtol=1e-15, rtol=1e-15)
    assert plane_stress_lambda3(np.diag([lam, lam]), P1) == pytest.approx(ref, rel=1e-12)


f2s = st.tuples(*[st.floats(-0.3, 0.3)] * 4).map(lambda a: np.eye(2) + np.reshape(a, (2, 2))).filter(
    lambda F: np.linalg.det(F) > 0.3)


@given(f2s)
def test_condensed_state_has_zero_out_of_plane_stress(F2):
    r = plane_stress_response(F2, P1)
    full = neo_hooke(embed(F2, r["lambda3"]), P1)
    s = full["sigma"]
    assert abs(s[2, 2]) <= 1e-10 and abs(s[0, 2]) <= 1e-10 and abs(s[1, 2]) <= 1e-10
    # in-plane first Piola and energy agree with the 3D law
    assert np.allclose(r["P"], full["P"][:2, :2], atol=1e-12)
    assert r["psi"] == pytest.approx(full["psi"], rel=1e-12, abs=1e-14)


@given(f2s)
def test_condensed_tangent_matches_finite_differences(F2):
    A = plane_stress_response(F2, P1)["A"]
    h = 1e-6
    for c in range(2):
        for d in range(2):
            dF = np.zeros((2, 2))
            dF[c, d] = h
            fd = (plane_stress_response(F2 + dF, P1, False)["P"] - plane_stress_response(F2 - dF, P1, False)["P"]) / (2 * h)
            assert np.allclose(A[:, :, c, d], fd, atol=1e-7)


@given(f2s, st.floats(0, 2 * np.pi))
def test_objectivity_of_condensed_response(F2, angle):
    c, s = np.cos(angle), np.sin(angle)
    Q = np.array([[c, -s], [s, c]])
    a = plane_stress_response(F2, P1, False)
    b = plane_stress_response(Q @ F2, P1, False)
    assert b["psi"] == pytest.approx(a["psi"], rel=1e-12, abs=1e-14)
    C = lambda F: embed(F, 1.0).T @ embed(F, 1.0)
    assert np.allclose(invariants(C(Q @ F2)), invariants(C(F2)), rtol=1e-12)


def test_zero_load_gives_reference_state():
    mesh = generate_plate_mesh(4.0, 6.0, h=1.0, h0=2.0)
    snaps = solve_forward(mesh, LoadProgram(2, [("bottom", 0, 0.0), ("bottom", 1, 0.0)]), P1)
    for s in snaps:
        assert np.all(s.u == 0) and np.all(s.thickness_quad == 2.0)
        assert np.allclose(s.forces, 0) and s.global_force == 0


def test_energy_gradient_matches_internal_forces(rng):
    mesh = generate_plate_mesh(3.0, 2.0, [], h=0.5, h0=1.3)
    u = 0.05 * rng.normal(size=(mesh.n_nodes, 2))
    f = internal_forces(mesh, u, P1)
    h = 1e-6
    fd = np.zeros_like(u)
    for i in range(mesh.n_nodes):
        for a in range(2):
            up, um = u.copy(), u.copy()
            up[i, a] += h
            um[i, a] -= h
            fd[i, a] = (strain_energy(mesh, up, P1) - strain_energy(mesh, um, P1)) / (2 * h)
    assert np.linalg.norm(fd - f) <= 1e-6 * np.linalg.norm(f)


def uniaxial_reference(t, p):
    """Stretches of a plane-stress bar with nominal axial stress ``t`` along 2,
    from the 3D law with zero lateral and out-of-plane stress."""
    def res(x):
        P = neo_hooke(np.diag([x[0], x[1], x[2]]), p)["P"]
        return [P[0, 0], P[1, 1] - t, P[2, 2]]

    return fsolve(res, [1.0, 1.0, 1.0], xtol=1e-13)


@pytest.mark.parametrize("t", [0.15, -0.1])
def test_homogeneous_bar_matches_uniaxial_solution(t):
    mesh = generate_plate_mesh(4.0, 10.0, h=1.0, h0=2.0)
    lp = LoadProgram(3, [("bottom", 1, 0.0), ("left", 0, 0.0)], tractions=[("top", (0.0, t))])
    snaps = solve_forward(mesh, lp, P1)
    lam1, lam2, lam3 = uniaxial_reference(t, P1)
    X = mesh.nodes
    u = snaps[-1].u
    assert np.allclose(u[:, 0], (lam1 - 1) * X[:, 0], atol=1e-8 * 10)
    assert np.allclose(u[:, 1], (lam2 - 1) * X[:, 1], atol=1e-8 * 10)
    assert np.allclose(snaps[-1].thickness_quad, lam3 * 2.0, rtol=1e-8)


def test_global_force_balances_opposite_boundary():
    mesh = generate_plate_mesh(10.0, 20.0, [Ellipse(5, 10, 2.5, 1.5, 0.3)], h=1.0)
    lp = LoadProgram(3, [("bottom", 0, 0.0), ("bottom", 1, 0.0), ("top", 0, 0.0), ("top", 1, 4.0)],
                     load_cell="top")
    snaps = solve_forward(mesh, lp, P1)
    forces = [s.global_force for s in snaps]
    assert np.all(np.diff(forces) > 0)
    s = snaps[-1]
    bottom = s.forces[mesh.node_set("bottom"), 1].sum()
    assert s.global_force == pytest.approx(-bottom, rel=1e-9)
    interior = np.setdiff1d(np.arange(mesh.n_nodes), np.concatenate([mesh.node_set("top"), mesh.node_set("bottom")]))
    assert np.abs(s.forces[interior]).max() == 0.0


@pytest.fixture(scope="module")
def strip():
    mesh = generate_plate_mesh(30.0, 90.0, [Ellipse(11, 42, 5, 3, 0.4), Ellipse(20, 52, 5, 3, -0.5)],
                               h=2.0, h0=2.0)
    lp = LoadProgram(4, [("bottom", 0, 0.0), ("bottom", 1, 0.0), ("top", 0, 0.0), ("top", 1, 25.0)],
                     load_cell="top")
    return mesh, solve_forward(mesh, lp, P1)


def test_ideal_round_trip_is_bit_exact(strip, tmp_path):
    mesh, snaps = strip
    ds = export_raw_data(snaps, mesh, "ideal", P1, window=(20.0, 70.0))
    write_dataset(ds, tmp_path)
    back = read_dataset(tmp_path)
    for a, b in zip(ds.snapshots, back.snapshots):
        assert np.array_equal(a.forces[a.known], b.forces[b.known])
        assert np.array_equal(a.known, b.known)
        assert np.array_equal(a.u, b.u) and np.array_equal(a.thickness_quad, b.thickness_quad)
        assert a.global_force == b.global_force
    assert back.meta == ds.meta


def test_ideal_window_forces_balance(strip):
    mesh, snaps = strip
    ds = export_raw_data(snaps, mesh, "ideal", P1, window=(20.0, 70.0))
    s = ds.snapshots[-1]
    # the known forces equal the window's internal forces everywhere except the zeta boundary
    f = internal_forces(ds.mesh, s.u, P1)
    assert np.allclose(s.forces[s.known], f[s.known], atol=1e-8 * np.abs(f).max())
    fb = ds.mesh.node_set("force_boundary")
    assert -s.forces[fb, 1].sum() == pytest.approx(s.global_force, rel=1e-8)


def test_realistic_export_drops_forces_and_projects_thickness(strip):
    mesh, snaps = strip
    real = export_raw_data(snaps, mesh, "realistic", window=(20.0, 70.0))
    for b in real.snapshots:
        assert b.forces is None and b.thickness_quad is None
        assert b.thickness_nodes.shape == (real.mesh.n_nodes,)
    assert real.meta["A0"] == pytest.approx(30.0 * 2.0)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="projection error peaks near 15% at the hole tips of this geometry")
def test_realistic_thickness_within_three_percent_on_strip_geometry():
    holes = [Ellipse(35, 185, 14, 8, 0.4), Ellipse(66, 228, 15, 8, -0.5)]
    mesh = generate_plate_mesh(100, 400, holes, h=6.0, h0=5.0)
    lp = LoadProgram(10, [("bottom", 0, 0.0), ("bottom", 1, 0.0), ("top", 0, 0.0), ("top", 1, 210.0)])
    snaps = solve_forward(mesh, lp, P1)
    ideal = export_raw_data(snaps, mesh, "ideal", P1, window=(90.0, 310.0))
    real = export_raw_data(snaps, mesh, "realistic", window=(90.0, 310.0))
    worst = max(np.max(np.abs(project_thickness_to_quadpoints(real.mesh, b.thickness_nodes) / a.thickness_quad - 1))
                for a, b in zip(ideal.snapshots, real.snapshots))
    assert worst <= 0.03


def test_realistic_uniform_thickness_is_exact():
    mesh = generate_plate_mesh(4.0, 6.0, h=1.0, h0=2.5)
    snaps = solve_forward(mesh, LoadProgram(1, [("bottom", 0, 0.0), ("bottom", 1, 0.0)]), P1)
    ds = export_raw_data(snaps, mesh, "realistic")
    assert np.array_equal(ds.snapshots[0].thickness_nodes, np.full(ds.mesh.n_nodes, 2.5))
