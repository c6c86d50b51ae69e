"""
Identification problem setup: mechanical strains, integration weights,
pseudo-stiffness metric, symmetric-gradient operators and nodal forces for
every quadrature point and snapshot.

Internally, in-plane tensors use engineering Voigt vectors: strains are
``(e11, e22, 2 e12)`` and stresses ``(s11, s22, s12)``, so that the virtual
work is a plain dot product. Exported strains and stresses use plain tensor
components.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp

from ..mesh import build_connectivity, edges_from_node_set, project_thickness_to_quadpoints, \
    traction_to_nodal_forces

__all__ = ["DdiError", "DdiConfig", "DdiProblem", "FORMULATIONS", "setup_problem", "voigt_metric"]

FORMULATIONS = ("ul", "tl", "tl-adapted")


class DdiError(RuntimeError):
    pass


@dataclass
class DdiConfig:
    """Settings of one identification run.

    ``nstar`` fixes the number of material states; otherwise it is
    ``ceil(nstar_ratio * n_quad * n_snap)``. ``pseudo_stiffness`` is the
    scale ``C`` (MPa) of the isotropic pseudo stiffness; ``None`` means ten
    times the stiffness estimated from the first snapshot. ``pin_nodes``
    lists nodes whose forces are treated as unknown, which is needed to
    suppress rigid-body modes when every nodal force is prescribed.
    """

    formulation: str = "ul"
    nstar: int = None
    nstar_ratio: float = 0.01
    pseudo_stiffness: float = None
    max_iter: int = 200
    tol: float = 1e-10
    reinit: bool = True
    seed: int = 0
    solver: str = "minres"
    pin_nodes: tuple = ()

    def __post_init__(self):
        self.formulation = self.formulation.lower()
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}")
        if self.nstar is not None and self.nstar < 1:
            raise ValueError("nstar must be at least 1")
        if not 0 < self.nstar_ratio <= 1:
            raise ValueError("nstar_ratio must lie in (0, 1]")
        if self.pseudo_stiffness is not None and not self.pseudo_stiffness > 0:
            raise ValueError("pseudo stiffness must be positive")
        if self.max_iter < 1 or not self.tol > 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")
        if self.solver not in ("minres", "schur", "dense"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def n_states(self, n_points):
        n = self.nstar if self.nstar is not None else math.ceil(self.nstar_ratio * n_points - 1e-9)
        return int(min(max(n, 1), n_points))


def voigt_metric(Cmat, F2, lam3, adapted):
    """Pseudo-stiffness metric per point in engineering Voigt form.

    Returns ``D`` ``(..., 3, 3)`` mapping ``(e11, e22, 2 e12)`` to
    ``(s11, s22, s12)`` and the out-of-plane weight ``c33``. The constant
    metric is ``C diag(1, 1, 1/2)``; the adapted one is the in-plane block of
    the pull-back ``C J / 2 (Ci Ci + Ci Ci)`` of the spatial metric.
    """
    shape = np.shape(lam3)
    if not adapted:
        D = np.broadcast_to(Cmat * np.diag([1.0, 1.0, 0.5]), shape + (3, 3)).copy()
        return D, np.full(shape, float(Cmat))
    C2 = np.swapaxes(F2, -1, -2) @ F2
    Ci = np.linalg.inv(C2)
    J = np.linalg.det(F2) * lam3
    pairs = ((0, 0), (1, 1), (0, 1))
    D = np.empty(shape + (3, 3))
    for I, (k, l) in enumerate(pairs):
        for K, (m, n) in enumerate(pairs):
            D[..., I, K] = 0.5 * Cmat * J * (Ci[..., k, m] * Ci[..., l, n] + Ci[..., k, n] * Ci[..., l, m])
    return D, Cmat * J / lam3**4


@dataclass
class DdiProblem:
    """All data-dependent, iteration-independent quantities.

    Arrays are indexed ``[snapshot, quadrature point, ...]``; ``edofs``
    holds the global degrees of freedom ``2 node + comp`` of each element and
    ``amap`` maps global dofs to rows of the saddle system (``-1`` for dofs
    of nodes with unknown forces).
    """

    formulation: str
    mesh: object
    C: float
    weight: np.ndarray
    eps: np.ndarray
    e33: np.ndarray
    F2: np.ndarray
    lam3: np.ndarray
    D: np.ndarray
    Dinv: np.ndarray
    c33: np.ndarray
    B: np.ndarray
    edofs: np.ndarray
    pi: np.ndarray
    amap: np.ndarray
    forces: np.ndarray
    K: list = field(default_factory=list)
    _lu: list = field(default=None, repr=False)

    @property
    def n_snap(self):
        return self.weight.shape[0]

    @property
    def n_quad(self):
        return self.weight.shape[1]

    @property
    def n_active(self):
        return int((self.amap >= 0).sum())

    @property
    def tensor_strains(self):
        """Mechanical strains ``(e11, e22, e33, e12)`` of shape ``(S, Q, 4)``."""
        return np.stack([self.eps[..., 0], self.eps[..., 1], self.e33, 0.5 * self.eps[..., 2]], axis=-1)

    def active_forces(self, tau):
        f = self.forces[tau].ravel()
        act = self.amap >= 0
        return f[act]

    def lu(self, tau):
        from scipy.sparse.linalg import splu

        if self._lu is None:
            self._lu = [None] * self.n_snap
        if self._lu[tau] is None:
            self._lu[tau] = splu(self.K[tau].tocsc())
        return self._lu[tau]


def _quad_thickness(mesh, snap):
    if snap.thickness_quad is not None:
        h = np.asarray(snap.thickness_quad, dtype=float)
    elif snap.thickness_nodes is not None:
        h = project_thickness_to_quadpoints(mesh, snap.thickness_nodes)
    else:
        raise DdiError(f"snapshot {snap.index} has no thickness data")
    if h.shape != (mesh.n_elements,):
        raise DdiError(f"snapshot {snap.index}: thickness has shape {h.shape}")
    if np.any(h <= 0):
        raise DdiError(f"snapshot {snap.index}: non-positive thickness")
    return h


def _forces(dataset):
    """Nodal forces ``(S, N, 2)`` and the per-node flag of known forces."""
    mesh, snaps, meta = dataset.mesh, dataset.snapshots, dataset.meta
    n = mesh.n_nodes
    if all(s.forces is not None for s in snaps):
        f = np.stack([np.asarray(s.forces, dtype=float) for s in snaps])
        known = np.stack([np.ones(n, bool) if s.known is None else np.asarray(s.known, bool) for s in snaps])
        return f, known.all(axis=0)
    # only the global force: uniform traction on the force boundary
    fb = mesh.node_set(meta.get("force_boundary", "force_boundary"))
    zb = mesh.node_set(meta.get("zeta_boundary", "zeta_boundary"))
    edges = edges_from_node_set(mesh, fb)
    if not len(edges):
        raise DdiError("force boundary has no boundary edges")
    A0 = meta.get("A0")
    if A0 is None:
        L = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1).sum()
        A0 = L * mesh.h0
    f = np.stack([traction_to_nodal_forces(mesh, edges, s.global_force / A0) for s in snaps])
    pi = np.ones(n, dtype=bool)
    pi[zb] = False
    return f, pi


def setup_problem(dataset, cfg, C=None):
    """Precompute everything the iteration needs from a raw dataset."""
    mesh = dataset.mesh
    Cmat = float(cfg.pseudo_stiffness if C is None else C)
    if not Cmat > 0:
        raise DdiError("pseudo stiffness must be positive")
    form = cfg.formulation
    snaps = dataset.snapshots
    S, Q = len(snaps), mesh.n_elements
    weight = np.empty((S, Q))
    eps = np.empty((S, Q, 3))
    e33 = np.empty((S, Q))
    F2 = np.empty((S, Q, 2, 2))
    lam3 = np.empty((S, Q))
    B = np.empty((S, Q, 3, 6))
    eye = np.eye(2)
    for t, s in enumerate(snaps):
        h = _quad_thickness(mesh, s)
        l3 = h / mesh.h0
        if form == "ul":
            con = build_connectivity(mesh, s.u, "deformed")
            F = con.F
            bi = np.linalg.inv(F @ np.swapaxes(F, -1, -2))
            e = 0.5 * (eye - bi)
            weight[t] = con.weight * con.jac * h
            e33[t] = 0.5 * (1.0 - 1.0 / l3**2)
        else:
            con = build_connectivity(mesh, s.u, "total_lagrange")
            F = con.F
            if np.any(np.linalg.det(F) <= 0):
                raise DdiError(f"snapshot {s.index}: inverted elements")
            e = 0.5 * (np.swapaxes(F, -1, -2) @ F - eye)
            weight[t] = con.weight * con.jac * mesh.h0
            e33[t] = 0.5 * (l3**2 - 1.0)
        eps[t] = np.stack([e[:, 0, 0], e[:, 1, 1], 2.0 * e[:, 0, 1]], axis=-1)
        F2[t] = F
        lam3[t] = l3
        B[t] = con.B
    D, c33 = voigt_metric(Cmat, F2, lam3, form == "tl-adapted")
    Dinv = np.linalg.inv(D)

    forces, pi = _forces(dataset)
    pins = np.asarray(cfg.pin_nodes, dtype=np.int64)
    pi = pi.copy()
    if pins.size:
        pi[pins] = False
    if pi.sum() > mesh.n_nodes - 2 and not pins.size:
        raise DdiError(
            "fewer than two nodes with unknown forces: rigid-body modes are not suppressed; "
            "configure pin_nodes"
        )
    act = np.repeat(pi, 2)
    amap = -np.ones(2 * mesh.n_nodes, dtype=np.int64)
    amap[act] = np.arange(int(act.sum()))
    e = mesh.elements
    edofs = np.stack([2 * e, 2 * e + 1], axis=-1).reshape(-1, 6)

    prob = DdiProblem(form, mesh, Cmat, weight, eps, e33, F2, lam3, D, Dinv, c33, B, edofs, pi, amap, forces)
    prob.K = [_stiffness(prob, t) for t in range(S)]
    return prob


def _stiffness(prob, t):
    w = prob.weight[t]
    B = prob.B[t]
    ke = w[:, None, None] * np.einsum("qia,qij,qjb->qab", B, prob.D[t], B)
    rows = prob.amap[np.repeat(prob.edofs, 6, axis=1)].ravel()
    cols = prob.amap[np.tile(prob.edofs, (1, 6))].ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = prob.n_active
    return sp.csr_matrix((ke.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n))
