import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_defgrad, random_rotation
from hyperfit.continuum import NeoHookeParams, neo_hooke
from hyperfit.evaluate import deformation_path
from hyperfit.pann import (
    PannData,
    PannError,
    PannParams,
    data_from_database,
    load_model,
    normalization_constant,
    pann_cauchy_from_b,
    pann_energy,
    pann_energy_nn,
    pann_loss_and_grad,
    pann_stress,
    save_model,
    train,
)
from hyperfit.rng import substream

P1 = NeoHookeParams(1.0, 0.3)


def constant_net(lam=0.1):
    return PannParams([1.0], np.zeros((1, 3)), [0.0], [0.0], lam)


def energy_of_F(F, p):
    return pann_energy(F.T @ F, p)


seeds = st.integers(0, 2**32 - 1)


def test_constant_network_reduces_to_growth_term():
    p = constant_net(0.3)
    assert pann_energy_nn(np.array([3.0, 3.0, 1.0, -2.0]), p) == pytest.approx(np.log(2.0))
    assert normalization_constant(p) == 0.0
    F = np.diag([1.3, 0.9, 1.1])
    J = np.linalg.det(F)
    assert energy_of_F(F, p) == pytest.approx(0.3 * (J + 1 / J - 2) ** 2, rel=1e-12)
    # isochoric state: growth term and its stress vanish
    F = np.diag([1.25, 0.8, 1.0])
    assert np.allclose(pann_stress(F, p)["T"], 0.0, atol=1e-14)


def test_growth_dominates_at_vanishing_volume():
    p = PannParams.random(4, 0.01, substream(0, "t"))
    vals = [energy_of_F(J ** (1 / 3) * np.eye(3), p) for J in (1e-2, 1e-4, 1e-6)]
    assert vals[0] < vals[1] < vals[2] and vals[2] > 1e8


def test_single_neuron_normalization_constant():
    p = PannParams([1.0], [[1.0, 0.0, 0.0]], [0.0], [0.0], 0.1)
    assert normalization_constant(p) == pytest.approx(1.905148, abs=1e-6)


@given(seeds, st.integers(1, 10))
def test_reference_state_is_stress_and_energy_free(seed, width):
    p = PannParams.random(width, 0.05, substream(seed, "t"))
    assert abs(energy_of_F(np.eye(3), p)) <= 1e-12
    assert np.abs(pann_stress(np.eye(3), p)["P"]).max() <= 1e-10


@given(seeds)
def test_stress_matches_energy_derivative(seed):
    rng = np.random.default_rng(seed)
    p = PannParams.random(8, 0.05, rng)
    F = random_defgrad(rng)
    P = pann_stress(F, p)["P"]
    h = 1e-6
    fd = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] = h
            fd[i, j] = (energy_of_F(F + d, p) - energy_of_F(F - d, p)) / (2 * h)
    assert np.linalg.norm(fd - P) <= 1e-6 * np.linalg.norm(P)


@given(seeds)
def test_cauchy_forms_agree(seed):
    rng = np.random.default_rng(seed)
    p = PannParams.random(6, 0.05, rng)
    F = random_defgrad(rng)
    s = pann_stress(F, p)
    assert np.allclose(pann_cauchy_from_b(F @ F.T, p), s["sigma"], rtol=1e-10, atol=1e-12)
    assert np.allclose(s["sigma"], s["sigma"].T, atol=1e-12)


@given(seeds)
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    p = PannParams.random(8, 0.05, rng)
    F = random_defgrad(rng)
    Q = random_rotation(rng)
    a, b = pann_stress(F, p), pann_stress(Q @ F, p)
    assert np.allclose(b["T"], a["T"], atol=1e-10)
    assert np.allclose(b["sigma"], Q @ a["sigma"] @ Q.T, atol=1e-10)
    assert energy_of_F(Q @ F, p) == pytest.approx(energy_of_F(F, p), abs=1e-10)


@given(seeds)
@settings(max_examples=20)
def test_network_is_convex_in_invariants(seed):
    rng = np.random.default_rng(seed)
    p = PannParams.random(8, 0.05, rng)
    x = rng.uniform([0, 0, 0, -10], [10, 30, 10, 0], (500, 4))
    y = rng.uniform([0, 0, 0, -10], [10, 30, 10, 0], (500, 4))
    mid = pann_energy_nn(0.5 * (x + y), p)
    assert np.all(mid <= 0.5 * (pann_energy_nn(x, p) + pann_energy_nn(y, p)) + 1e-12)


def neo_hooke_samples(metric="ul"):
    lam = np.linspace(0.8, 1.4, 25)
    F = np.concatenate([deformation_path(k, lam, P1) for k in ("uniaxial", "equibiaxial", "shear")])
    out = neo_hooke(F, P1)
    if metric == "ul":
        return PannData(F @ np.swapaxes(F, 1, 2), out["sigma"], "ul")
    return PannData(np.swapaxes(F, 1, 2) @ F, out["T"], "tl")


@given(seeds)
@settings(max_examples=25)
def test_loss_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    data = neo_hooke_samples("ul" if seed % 2 else "tl")
    p = PannParams.random(4, 0.05, rng, data.metric)
    _, g = pann_loss_and_grad(p, data)
    x = p.to_vector()
    h = 1e-6
    fd = np.array([(pann_loss_and_grad(PannParams.from_vector(x + h * e, 4, 0.05, data.metric), data)[0]
                    - pann_loss_and_grad(PannParams.from_vector(x - h * e, 4, 0.05, data.metric), data)[0]) / (2 * h)
                   for e in np.eye(len(x))])
    assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1e-8)


def test_loss_examples():
    data = neo_hooke_samples()
    p = PannParams.random(3, 0.05, substream(1, "t"))
    exact = PannData(data.X, data.predict(p), "ul")
    mse, g = pann_loss_and_grad(p, exact)
    assert mse == 0.0 and np.abs(g).max() == 0.0
    # doubling every residual quadruples the error
    Y2 = 2 * data.Y - data.predict(p)
    base, _ = pann_loss_and_grad(p, data)
    assert pann_loss_and_grad(p, PannData(data.X, Y2, "ul"))[0] == pytest.approx(4 * base, rel=1e-12)


def test_training_recovers_a_pann():
    rng = substream(5, "t")
    truth = PannParams.random(4, 0.05, rng, "tl")
    F = np.array([random_defgrad(rng, 0.25) for _ in range(200)])
    C = np.swapaxes(F, 1, 2) @ F
    data = PannData(C, pann_stress(F, truth)["T"], "tl").split(0.3, substream(5, "pann-split"))
    p, rep = train(data, width=4, lambda_gr=0.05, restarts=3, seed=1)
    assert rep.test_r2 >= 0.9999
    assert p.is_admissible()


@pytest.mark.parametrize("metric", ["ul", "tl"])
def test_training_on_neo_hooke_samples(metric):
    data = neo_hooke_samples(metric).split(0.3, substream(0, "pann-split"))
    p, rep = train(data, width=8, lambda_gr=1e-2, restarts=3, seed=0)
    assert rep.test_r2 >= 0.999
    assert p.is_admissible()
    assert np.abs(pann_stress(np.eye(3), p)["P"]).max() <= 1e-10
    assert rep.best in range(3) and len(rep.restarts) == 3


def test_training_is_deterministic():
    data = neo_hooke_samples().split(0.3, substream(0, "pann-split"))
    a, _ = train(data, width=3, restarts=2, maxiter=200, seed=4)
    b, _ = train(data, width=3, restarts=2, maxiter=200, seed=4)
    assert np.array_equal(a.to_vector(), b.to_vector())


def test_database_conversion():
    F = np.diag([1.2, 0.9, 0.95])
    b = F @ F.T
    e = 0.5 * (np.eye(3) - np.linalg.inv(b))
    data = data_from_database([[e[0, 0], e[1, 1], e[2, 2], e[0, 1]]], [[1.0, 2.0, 0.5]], "ul")
    assert np.allclose(data.X[0], b, rtol=1e-12)
    assert np.array_equal(data.Y[0], [[1.0, 0.5, 0], [0.5, 2.0, 0], [0, 0, 0]])
    E = 0.5 * (F.T @ F - np.eye(3))
    data = data_from_database([[E[0, 0], E[1, 1], E[2, 2], 0.0], [0.6, 0.0, 0.0, 0.0]], np.zeros((2, 3)), "ul")
    assert len(data) == 1  # e11 = 0.6 is outside the admissible range of Euler-Almansi strains
    with pytest.raises(ValueError):
        PannData(np.zeros((0, 3, 3)), np.zeros((0, 3, 3)))


def test_model_file_round_trip(tmp_path):
    p = PannParams.random(5, 0.02, substream(3, "t"), "tl")
    save_model(p, tmp_path / "m.pann")
    q = load_model(tmp_path / "m.pann")
    assert np.array_equal(p.to_vector(), q.to_vector()) and q.lambda_gr == p.lambda_gr and q.metric == "tl"
    text = (tmp_path / "m.pann").read_text()
    assert "format pann-v1" in text and "units mm-N-MPa" in text
    (tmp_path / "bad.pann").write_text(text.replace("pann-v1", "pann-v0"))
    with pytest.raises(PannError):
        load_model(tmp_path / "bad.pann")
