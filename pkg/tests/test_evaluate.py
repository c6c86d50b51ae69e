import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperfit.continuum import NeoHookeParams, kinematics, neo_hooke
from hyperfit.ddi import DdiConfig, setup_problem
from hyperfit.evaluate import (
    PATHS,
    SWEEP_FIELDS,
    SweepSpec,
    deformation_path,
    estimate_stiffness,
    r2,
    reference_stress,
    run_sweep,
    stiffness_estimate,
    stress_path_compare,
    write_csv,
)
from hyperfit.fe import LoadProgram, export_raw_data, solve_forward
from hyperfit.mesh import Ellipse, generate_plate_mesh
from hyperfit.pann import PannData, train
from hyperfit.rng import substream

P1 = NeoHookeParams(1.0, 0.3)


def as4(e):
    return np.array([[e[0, 0], e[1, 1], e[2, 2], e[0, 1]]])


def test_reference_stress_at_zero_strain():
    for metric in ("ul", "tl"):
        s, ok = reference_stress(np.zeros((2, 4)), P1, metric)
        assert ok.all() and np.allclose(s, 0, atol=1e-15)


def test_reference_stress_on_uniaxial_state():
    F = deformation_path("uniaxial", [2.0], P1)[0]
    k = kinematics(F)
    assert k["e"][0, 0] == pytest.approx(0.375)
    ref = neo_hooke(F, P1)
    s, _ = reference_stress(as4(k["e"]), P1, "ul")
    assert np.allclose(s[0], [ref["sigma"][0, 0], ref["sigma"][1, 1], ref["sigma"][0, 1]], rtol=1e-12, atol=1e-14)
    s, _ = reference_stress(as4(k["E"]), P1, "tl")
    assert np.allclose(s[0], [ref["T"][0, 0], ref["T"][1, 1], ref["T"][0, 1]], rtol=1e-12, atol=1e-14)


def test_reference_stress_flags_inadmissible_strain():
    s, ok = reference_stress([[0.6, 0, 0, 0], [0.1, 0, 0, 0]], P1, "ul")
    assert not ok[0] and ok[1] and np.isnan(s[0]).all()


def test_strain_round_trip(rng):
    F = np.eye(3) + 0.2 * rng.uniform(-1, 1, (3, 3))
    e = kinematics(F)["e"]
    b = np.linalg.inv(np.eye(3) - 2 * e)
    assert np.allclose(0.5 * (np.eye(3) - np.linalg.inv(b)), e, atol=1e-12)


def test_r2_examples():
    ref = np.array([0.0, 1.0, 2.0])
    assert r2(ref, ref).pooled == 1.0
    assert r2(np.full(3, ref.mean()), ref).pooled == 0.0
    assert r2(np.array([0.0, 1.0, 1.0]), ref).pooled == pytest.approx(0.5)
    rep = r2(np.array([[0, 1, 2], [1, 2, 3.5]]), np.array([[0, 1, 2], [1, 2, 3]]))
    assert set(rep.components) == {"11", "22", "12"} and rep.components["11"] == 1.0
    with pytest.raises(ValueError):
        r2(np.ones(3), np.ones(3))


@given(arrays(np.float64, 20, elements=st.floats(-5, 5)), arrays(np.float64, 20, elements=st.floats(-5, 5)),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_r2_affine_invariance(pred, ref, a, c):
    if np.ptp(ref) < 1e-3:
        return
    assert r2(a * pred + c, a * ref + c).pooled == pytest.approx(r2(pred, ref).pooled, rel=1e-9, abs=1e-9)


def test_stiffness_estimate_examples():
    assert stiffness_estimate(15.096, 500.0, 219.293, 8.018) == pytest.approx(0.82575, abs=5e-6)
    assert stiffness_estimate(2 * 15.096, 500.0, 219.293, 8.018) == pytest.approx(2 * 0.8257538, rel=1e-6)
    with pytest.raises(ValueError):
        stiffness_estimate(1.0, 1.0, 1.0, 0.0)


def test_stiffness_estimate_recovers_modulus_of_a_bar():
    E = 2.7
    p = NeoHookeParams(E, 0.3)
    mesh = generate_plate_mesh(10.0, 50.0, h=2.5, h0=2.0)
    lp = LoadProgram(1, [("bottom", 1, 0.0), ("left", 0, 0.0), ("top", 1, 0.05)], load_cell="bottom")
    ds = export_raw_data(solve_forward(mesh, lp, p), mesh, "realistic")
    assert estimate_stiffness(ds) == pytest.approx(E, rel=0.02)


@pytest.fixture(scope="module")
def small():
    mesh = generate_plate_mesh(10.0, 20.0, [Ellipse(5.0, 10.0, 2.5, 1.5, 0.3)], h=2.0, h0=1.0)
    lp = LoadProgram(3, [("bottom", 0, 0.0), ("bottom", 1, 0.0), ("top", 0, 0.0), ("top", 1, 3.0)])
    return export_raw_data(solve_forward(mesh, lp, P1), mesh, "ideal", P1)


@pytest.mark.parametrize("form", ["ul", "tl"])
def test_reference_stress_reproduces_forward_stresses(small, form):
    prob = setup_problem(small, DdiConfig(form, pseudo_stiffness=1.0))
    F = np.zeros(prob.F2.shape[:2] + (3, 3))
    F[..., :2, :2] = prob.F2
    F[..., 2, 2] = prob.lam3
    out = neo_hooke(F.reshape(-1, 3, 3), P1)
    S = out["sigma"] if form == "ul" else out["T"]
    s, ok = reference_stress(prob.tensor_strains.reshape(-1, 4), P1, form)
    assert ok.all()
    assert np.allclose(s, np.column_stack([S[:, 0, 0], S[:, 1, 1], S[:, 0, 1]]), rtol=0, atol=1e-8)


def test_sweep_rows_and_determinism(small, tmp_path):
    spec = SweepSpec("nstar-ratio", [0.02, 2.0], ["ul", "tl"])
    base = DdiConfig(pseudo_stiffness=1.0)
    rows = run_sweep(spec, small, base, P1)
    assert len(rows) == 4 and [r["formulation"] for r in rows] == ["ul", "tl", "ul", "tl"]
    assert rows[0]["error"] == "" and rows[0]["r2_mat"] <= 1.0 and rows[0]["converged"] in (True, False)
    # an invalid value is recorded and the sweep carries on
    assert rows[2]["error"].startswith("ValueError")
    write_csv(rows, tmp_path / "a.csv", SWEEP_FIELDS)
    write_csv(run_sweep(spec, small, base, P1), tmp_path / "b.csv", SWEEP_FIELDS)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv") as fh:
        assert next(csv.reader(fh)) == SWEEP_FIELDS
    with pytest.raises(ValueError):
        SweepSpec("width", [1])


def test_path_compare_reference_against_itself():
    rows = stress_path_compare(P1, P1)
    assert [r["path"] for r in rows] == list(PATHS)
    assert all(r["max_rel_error"] == 0.0 for r in rows)


def test_paths_are_lateral_stress_free():
    lam = np.linspace(0.8, 1.4, 7)
    for name, free in (("uniaxial", [(1, 1), (2, 2)]), ("equibiaxial", [(2, 2)])):
        P = neo_hooke(deformation_path(name, lam, P1), P1)["P"]
        for i, j in free:
            assert np.abs(P[:, i, j]).max() <= 1e-12
    with pytest.raises(ValueError):
        deformation_path("torsion", lam, P1)


def test_pann_trained_on_dense_samples_reproduces_paths():
    lam = np.linspace(0.8, 1.4, 40)
    F = np.concatenate([deformation_path(k, lam, P1) for k in PATHS])
    data = PannData(np.swapaxes(F, 1, 2) @ F, neo_hooke(F, P1)["T"], "tl").split(0.2, substream(0, "pann-split"))
    model, rep = train(data, width=8, lambda_gr=1e-2, restarts=3, seed=0)
    rows = stress_path_compare(model, P1)
    assert max(r["max_rel_error"] for r in rows) <= 0.01
