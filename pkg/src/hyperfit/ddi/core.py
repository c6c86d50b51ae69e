"""
The staggered identification iteration: mapping initialisation, mechanical
stress and material strain updates, nearest-state reassignment and the outer
fixed-point loop.
"""
from dataclasses import dataclass, field
import logging
import time

import numpy as np
from sklearn.cluster import KMeans

from ..rng import subseed
from .problem import DdiError, setup_problem
from .solver import equilibrium_residual, solve_saddle_system

log = logging.getLogger(__name__)

__all__ = [
    "Database",
    "DdiResult",
    "ddi_loss",
    "pointwise_distance",
    "init_mapping",
    "update_mechanical_stress",
    "update_material_strain",
    "reassign_mapping",
    "recover_unknown_forces",
    "run_ddi",
]


@dataclass
class Database:
    """Material states: engineering in-plane strains ``eps`` ``(N*, 3)``,
    out-of-plane strains ``e33`` ``(N*,)`` and stresses ``stress``
    ``(N*, 3)`` as ``(s11, s22, s12)``."""

    eps: np.ndarray
    e33: np.ndarray
    stress: np.ndarray

    @property
    def size(self):
        return len(self.e33)

    @property
    def tensor_strains(self):
        return np.column_stack([self.eps[:, 0], self.eps[:, 1], self.e33, 0.5 * self.eps[:, 2]])

    def copy(self):
        return Database(self.eps.copy(), self.e33.copy(), self.stress.copy())


@dataclass
class DdiResult:
    formulation: str
    database: Database
    weights: np.ndarray
    mapping: np.ndarray
    stress: np.ndarray
    strains: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    converged: bool
    iterations: int
    pseudo_stiffness: float
    eliminated: np.ndarray = None
    flags: list = field(default_factory=list)
    history: list = field(default_factory=list)
    problem: object = None


def _point_terms(prob, db, mapping, stress):
    de = prob.eps - db.eps[mapping]
    d33 = prob.e33 - db.e33[mapping]
    ds = stress - db.stress[mapping]
    strain = np.einsum("...i,...ij,...j->...", de, prob.D, de) + prob.c33 * d33**2
    stress_t = np.einsum("...i,...ij,...j->...", ds, prob.Dinv, ds)
    return strain, stress_t


def ddi_loss(prob, db, mapping, stress):
    """Distance part of the loss, ``1/2 sum w (|de|_D^2 + |ds|_D^-1^2)``."""
    a, b = _point_terms(prob, db, mapping, stress)
    return float(0.5 * np.sum(prob.weight * (a + b)))


def pointwise_distance(prob, db, stress, states=None, chunk=4096, exact=False):
    """Distances ``(S*Q, len(states))`` of every mechanical state to database
    entries under the formulation's metric, without integration weights.

    By default the quadratic forms are expanded so that the scan over all
    pairs is one matrix product per chunk; ``exact=True`` evaluates the
    differences directly (slower, used as a test oracle).
    """
    states = np.arange(db.size) if states is None else np.asarray(states)
    eps = prob.eps.reshape(-1, 3)
    e33 = prob.e33.ravel()
    sig = np.asarray(stress).reshape(-1, 3)
    D = prob.D.reshape(-1, 3, 3)
    Di = prob.Dinv.reshape(-1, 3, 3)
    c33 = prob.c33.ravel()
    Ez, E33z, Sz = db.eps[states], db.e33[states], db.stress[states]
    out = np.empty((len(eps), len(states)))
    if not exact:
        # per state: [1, z, z z^T, z33, z33^2, s, s s^T]
        right = np.hstack([np.ones((len(states), 1)), Ez, (Ez[:, :, None] * Ez[:, None, :]).reshape(-1, 9),
                           E33z[:, None], E33z[:, None] ** 2, Sz, (Sz[:, :, None] * Sz[:, None, :]).reshape(-1, 9)])
    for a in range(0, len(eps), chunk):
        sl = slice(a, a + chunk)
        if exact:
            de = eps[sl, None, :] - Ez[None]
            ds = sig[sl, None, :] - Sz[None]
            d = np.einsum("pzi,pij,pzj->pz", de, D[sl], de)
            d += c33[sl, None] * (e33[sl, None] - E33z[None]) ** 2
            d += np.einsum("pzi,pij,pzj->pz", ds, Di[sl], ds)
            out[sl] = d
            continue
        x, s = eps[sl], sig[sl]
        Dx = np.einsum("pij,pj->pi", D[sl], x)
        Ds = np.einsum("pij,pj->pi", Di[sl], s)
        c = c33[sl]
        const = np.einsum("pi,pi->p", x, Dx) + c * e33[sl] ** 2 + np.einsum("pi,pi->p", s, Ds)
        left = np.hstack([const[:, None], -2.0 * Dx, D[sl].reshape(-1, 9), (-2.0 * c * e33[sl])[:, None],
                          c[:, None], -2.0 * Ds, Di[sl].reshape(-1, 9)])
        out[sl] = left @ right.T
    return out


def _repair_empty(points, labels, centers, k):
    """Give every empty cluster the point farthest from its own centroid,
    taken from clusters that have more than one member."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    dist = np.linalg.norm(points - centers[labels], axis=1)
    order = np.argsort(-dist, kind="stable")
    pos = 0
    for z in np.flatnonzero(counts == 0):
        while pos < len(order) and counts[labels[order[pos]]] <= 1:
            pos += 1
        if pos == len(order):
            break
        p = order[pos]
        counts[labels[p]] -= 1
        labels[p] = z
        counts[z] = 1
        pos += 1
    return labels


def init_mapping(points, nstar, seed=0, init=None):
    """k-means partition of ``points`` ``(n, d)`` into ``nstar`` clusters.

    ``init`` optionally fixes the initial centroids (used for the one-time
    reinitialisation on stresses). Every cluster ends up non-empty whenever
    ``nstar <= n``.
    """
    X = np.asarray(points, dtype=float)
    n = len(X)
    if not 1 <= nstar <= n:
        raise ValueError(f"nstar must lie in [1, {n}], got {nstar}")
    if nstar == 1:
        return np.zeros(n, dtype=np.int64)
    rs = np.random.RandomState(np.random.SeedSequence(subseed(seed, "kmeans")).generate_state(1)[0])
    if init is None:
        km = KMeans(n_clusters=nstar, n_init=1, random_state=rs)
    else:
        km = KMeans(n_clusters=nstar, n_init=1, init=np.asarray(init, dtype=float), random_state=rs)
    labels = km.fit_predict(X).astype(np.int64)
    return _repair_empty(X, labels, km.cluster_centers_, nstar)


def update_mechanical_stress(prob, mapping, sol, db):
    """``s = s*_{s(g,t)} + D B eta`` at every point; the material stresses of
    the states in the solve are written into ``db`` first."""
    db.stress[sol.states] = sol.sstar
    full = np.zeros((prob.n_snap, 2 * prob.mesh.n_nodes))
    full[:, prob.amap >= 0] = sol.eta
    ue = full[:, prob.edofs]  # (S, Q, 6)
    grad = np.einsum("tqij,tqj->tqi", prob.B, ue)
    return db.stress[mapping] + np.einsum("tqij,tqj->tqi", prob.D, grad)


def update_material_strain(prob, mapping, db):
    """Material strains as (metric-)weighted means of the assigned mechanical
    strains. States without points keep their strains. Returns the list of
    states that needed the unweighted-mean fallback."""
    k = db.size
    m = mapping.ravel()
    w = prob.weight.ravel()
    eps = prob.eps.reshape(-1, 3)
    e33 = prob.e33.ravel()
    used = np.bincount(m, minlength=k) > 0
    fallback = []
    if prob.formulation != "tl-adapted":
        wsum = np.bincount(m, weights=w, minlength=k)
        for i in range(3):
            num = np.bincount(m, weights=w * eps[:, i], minlength=k)
            db.eps[used, i] = num[used] / wsum[used]
        db.e33[used] = np.bincount(m, weights=w * e33, minlength=k)[used] / wsum[used]
        return fallback
    WD = w[:, None, None] * prob.D.reshape(-1, 3, 3)
    A = np.zeros((k, 3, 3))
    b = np.zeros((k, 3))
    np.add.at(A, m, WD)
    np.add.at(b, m, np.einsum("pij,pj->pi", WD, eps))
    wc = w * prob.c33.ravel()
    c_sum = np.bincount(m, weights=wc, minlength=k)
    db.e33[used] = np.bincount(m, weights=wc * e33, minlength=k)[used] / c_sum[used]
    wsum = np.bincount(m, weights=w, minlength=k)
    for z in np.flatnonzero(used):
        if np.linalg.cond(A[z]) < 1e12:
            db.eps[z] = np.linalg.solve(A[z], b[z])
        else:
            sel = m == z
            db.eps[z] = (w[sel, None] * eps[sel]).sum(axis=0) / wsum[z]
            fallback.append(int(z))
    return fallback


def reassign_mapping(prob, db, stress):
    """Nearest database entry for every mechanical state (exhaustive scan,
    lowest index wins ties)."""
    d = pointwise_distance(prob, db, stress)
    return np.argmin(d, axis=1).reshape(prob.n_snap, prob.n_quad)


def recover_unknown_forces(prob, stress):
    """Nodal forces ``sum w B^T s`` at the nodes whose forces are unknown,
    ``(S, N, 2)`` with zeros elsewhere."""
    out = np.zeros((prob.n_snap, prob.mesh.n_nodes, 2))
    for t in range(prob.n_snap):
        fe = prob.weight[t][:, None] * np.einsum("qia,qi->qa", prob.B[t], stress[t])
        f = np.zeros(2 * prob.mesh.n_nodes)
        np.add.at(f, prob.edofs.ravel(), fe.ravel())
        out[t] = f.reshape(-1, 2)
    out[:, prob.pi] = 0.0
    return out


def run_ddi(dataset, cfg, problem=None):
    """Run the identification on a raw dataset.

    Returns a :class:`DdiResult`. If the mapping does not reach a fixed
    point within ``cfg.max_iter`` iterations the last iterate is returned
    with ``converged = False``.
    """
    C = cfg.pseudo_stiffness
    if C is None:
        from ..evaluate import estimate_stiffness

        C = 10.0 * estimate_stiffness(dataset)
        log.info("pseudo stiffness from stiffness estimate: %.6g MPa", C)
    prob = problem if problem is not None else setup_problem(dataset, cfg, C)
    S, Q = prob.n_snap, prob.n_quad
    nstar = cfg.n_states(S * Q)
    strains = prob.tensor_strains
    mapping = init_mapping(strains.reshape(-1, 4), nstar, cfg.seed).reshape(S, Q)
    db = Database(np.zeros((nstar, 3)), np.zeros(nstar), np.zeros((nstar, 3)))
    flags = []
    history = []
    sol = None
    converged = False
    stress = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter()
        states = np.unique(mapping)
        sol = solve_saddle_system(prob, mapping, states, cfg.solver, cfg.tol)
        stress = update_mechanical_stress(prob, mapping, sol, db)
        fb = update_material_strain(prob, mapping, db)
        if fb:
            flags.append(f"iteration {it}: unweighted-mean fallback for states {fb}")
        res = equilibrium_residual(prob, stress)
        loss = ddi_loss(prob, db, mapping, stress)
        if it == 1 and cfg.reinit and nstar > 1:
            new = init_mapping(stress.reshape(-1, 3), nstar, cfg.seed, init=db.stress).reshape(S, Q)
        else:
            new = reassign_mapping(prob, db, stress)
        changed = int(np.sum(new != mapping))
        history.append({"iteration": it, "loss": loss, "changed": changed, "residual": res,
                        "states": int(len(states)), "krylov": sol.iterations,
                        "seconds": time.perf_counter() - t0})
        log.info("iter %d loss %.6e changed %d residual %.2e", it, loss, changed, res)
        if changed == 0 and not (it == 1 and cfg.reinit and nstar > 1):
            converged = True
            break
        if it == cfg.max_iter:
            break
        mapping = new
    if not converged:
        flags.append(f"mapping did not reach a fixed point in {cfg.max_iter} iterations")
    used = np.bincount(mapping.ravel(), minlength=nstar)
    eliminated = np.flatnonzero(used == 0)
    weights = np.bincount(mapping.ravel(), weights=prob.weight.ravel(), minlength=nstar)
    zeta = recover_unknown_forces(prob, stress)
    eta = np.zeros((S, 2 * prob.mesh.n_nodes))
    eta[:, prob.amap >= 0] = sol.eta
    return DdiResult(
        formulation=prob.formulation,
        database=db,
        weights=weights,
        mapping=mapping,
        stress=stress,
        strains=strains,
        eta=eta.reshape(S, -1, 2),
        zeta=zeta,
        converged=converged,
        iterations=it,
        pseudo_stiffness=float(C),
        eliminated=eliminated,
        flags=flags,
        history=history,
        problem=prob,
    )
