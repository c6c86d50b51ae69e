"""
Nonlinear plane-stress finite elements for the virtual experiment.

Linear triangles, total Lagrangian, compressible neo-Hooke. The out-of-plane
stretch is condensed at every quadrature point so that the out-of-plane
normal stress vanishes; for the neo-Hooke law this has the closed form
``lambda3**2 = (2 mu + lam) / (2 mu + lam J2**2)`` with ``J2`` the in-plane
Jacobian.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .continuum import DomainError
from .mesh import (
    QUAD_WEIGHT,
    MeshError,
    edges_from_node_set,
    project_thickness_to_nodes,
    shape_gradients,
    submesh,
    traction_to_nodal_forces,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConvergenceError",
    "LoadProgram",
    "Snapshot",
    "plane_stress_lambda3",
    "plane_stress_response",
    "internal_forces",
    "strain_energy",
    "solve_forward",
    "window_mesh",
    "export_raw_data",
]


class ConvergenceError(RuntimeError):
    pass


@dataclass
class LoadProgram:
    """Proportional load program applied in ``n_snap`` equal increments.

    ``dirichlet`` holds ``(node_set, component, final_value)`` triples and
    ``tractions`` holds ``(node_set, (t1, t2))`` pairs of dead surface loads
    in MPa acting on the boundary edges of the node set. ``load_cell`` names
    the node set whose summed 2-reaction is reported as the global force.
    """

    n_snap: int = 10
    dirichlet: list = field(default_factory=list)
    tractions: list = field(default_factory=list)
    load_cell: str = None

    def __post_init__(self):
        if self.n_snap < 1:
            raise ValueError("n_snap must be at least 1")


@dataclass
class Snapshot:
    """One load increment of the (virtual) experiment.

    ``forces`` with ``known`` flags per node; either or both thickness fields
    may be present. ``global_force`` is the 2-component of the reaction at
    the load cell (N).
    """

    index: int
    u: np.ndarray
    forces: np.ndarray = None
    known: np.ndarray = None
    thickness_quad: np.ndarray = None
    thickness_nodes: np.ndarray = None
    global_force: float = 0.0


def plane_stress_lambda3(F2, p):
    """Out-of-plane stretch giving zero out-of-plane normal stress."""
    F2 = np.asarray(F2, dtype=float)
    J2 = F2[..., 0, 0] * F2[..., 1, 1] - F2[..., 0, 1] * F2[..., 1, 0]
    if np.any(J2 <= 0):
        raise DomainError("in-plane deformation gradient must have a positive determinant")
    mu, lam = p.mu, p.lam
    return np.sqrt((2.0 * mu + lam) / (2.0 * mu + lam * J2**2))


def _cof2(F):
    c = np.empty_like(F)
    c[..., 0, 0] = F[..., 1, 1]
    c[..., 0, 1] = -F[..., 1, 0]
    c[..., 1, 0] = -F[..., 0, 1]
    c[..., 1, 1] = F[..., 0, 0]
    return c


_DCOF = np.zeros((2, 2, 2, 2))
_DCOF[0, 0, 1, 1] = _DCOF[1, 1, 0, 0] = 1.0
_DCOF[0, 1, 1, 0] = _DCOF[1, 0, 0, 1] = -1.0


def plane_stress_response(F2, p, tangent=True):
    """Condensed plane-stress neo-Hooke response.

    Returns
    -------
    dict
        ``psi`` (energy per reference volume), ``P`` in-plane first Piola
        stress ``(..., 2, 2)``, ``lambda3`` and, if requested, the condensed
        tangent ``A = dP/dF`` of shape ``(..., 2, 2, 2, 2)``.
    """
    F2 = np.asarray(F2, dtype=float)
    mu, lam = p.mu, p.lam
    J2 = F2[..., 0, 0] * F2[..., 1, 1] - F2[..., 0, 1] * F2[..., 1, 0]
    if np.any(J2 <= 0):
        raise DomainError("in-plane deformation gradient must have a positive determinant")
    den = 2.0 * mu + lam * J2**2
    L = (2.0 * mu + lam) / den
    I3 = J2**2 * L
    lnI3 = np.log(I3)
    trC = np.sum(F2**2, axis=(-2, -1))
    psi = 0.5 * mu * (trC + L - lnI3 - 3.0) + 0.25 * lam * (I3 - lnI3 - 1.0)
    g = -mu / J2 + 0.5 * lam * (J2 * L - 1.0 / J2)
    cof = _cof2(F2)
    out = {"psi": psi, "P": mu * F2 + g[..., None, None] * cof, "lambda3": np.sqrt(L)}
    if tangent:
        dL = -2.0 * lam * J2 * (2.0 * mu + lam) / den**2
        dg = mu / J2**2 + 0.5 * lam * (L + J2 * dL + 1.0 / J2**2)
        eye = np.eye(2)
        A = mu * np.einsum("ac,bd->abcd", eye, eye)
        A = A + dg[..., None, None, None, None] * np.einsum("...ab,...cd->...abcd", cof, cof)
        A = A + g[..., None, None, None, None] * _DCOF
        out["A"] = A
    return out


def _element_dofs(mesh):
    e = mesh.elements
    return np.stack([2 * e, 2 * e + 1], axis=-1).reshape(-1, 6)


def _kinematics(mesh, u, grad0):
    return np.eye(2) + np.einsum("eia,eib->eab", u[mesh.elements], grad0)


def strain_energy(mesh, u, p):
    """Total stored energy ``sum_g w J0 h0 psi`` of a displacement field."""
    grad0, jac0 = shape_gradients(mesh.nodes[mesh.elements])
    F = _kinematics(mesh, np.asarray(u).reshape(-1, 2), grad0)
    r = plane_stress_response(F, p, tangent=False)
    return float(np.sum(QUAD_WEIGHT * jac0 * mesh.h0 * r["psi"]))


def internal_forces(mesh, u, p, elements=None):
    """Nodal internal forces ``(n_nodes, 2)``, optionally from a subset of elements."""
    grad0, jac0 = shape_gradients(mesh.nodes[mesh.elements])
    F = _kinematics(mesh, np.asarray(u).reshape(-1, 2), grad0)
    r = plane_stress_response(F, p, tangent=False)
    fe = (QUAD_WEIGHT * jac0 * mesh.h0)[:, None, None] * np.einsum("eab,eib->eia", r["P"], grad0)
    if elements is not None:
        mask = np.zeros(mesh.n_elements, dtype=bool)
        mask[elements] = True
        fe = fe * mask[:, None, None]
    f = np.zeros((mesh.n_nodes, 2))
    np.add.at(f, mesh.elements, fe)
    return f


def _assemble(mesh, u, p, grad0, jac0, dofs):
    F = _kinematics(mesh, u, grad0)
    J2 = np.linalg.det(F)
    if np.any(J2 <= 0) or not np.all(np.isfinite(F)):
        return None
    r = plane_stress_response(F, p)
    V = QUAD_WEIGHT * jac0 * mesh.h0
    fe = V[:, None, None] * np.einsum("eab,eib->eia", r["P"], grad0)
    f = np.zeros(2 * mesh.n_nodes)
    np.add.at(f, dofs.ravel(), fe.reshape(-1))
    ke = V[:, None, None, None, None] * np.einsum("eib,eabcd,ejd->eiajc", grad0, r["A"], grad0)
    ke = ke.reshape(-1, 6, 6)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(2 * mesh.n_nodes,) * 2)
    return f, K, r


def _dirichlet(mesh, loads):
    dofs, vals = [], []
    for name, comp, value in loads.dirichlet:
        idx = mesh.node_set(name)
        dofs.append(2 * idx + int(comp))
        vals.append(np.full(len(idx), float(value)))
    if not dofs:
        raise MeshError("load program has no Dirichlet conditions")
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    uniq, first = np.unique(dofs, return_index=True)
    return uniq, vals[first]


def _external(mesh, loads):
    f = np.zeros((mesh.n_nodes, 2))
    for name, t in loads.tractions:
        edges = edges_from_node_set(mesh, mesh.node_set(name))
        f += traction_to_nodal_forces(mesh, edges, np.asarray(t, dtype=float))
    return f.ravel()


def solve_forward(mesh, loads, p, rtol=1e-9, atol=1e-12, max_iter=25, max_cuts=8):
    """Quasi-static load stepping with full Newton and backtracking.

    Each of the ``loads.n_snap`` equal increments is converged (with
    automatic substepping on failure) and emitted as one :class:`Snapshot`
    holding exact nodal forces, the deformed thickness at the quadrature
    points and the global force at ``loads.load_cell``.
    """
    grad0, jac0 = shape_gradients(mesh.nodes[mesh.elements])
    dofs = _element_dofs(mesh)
    ndof = 2 * mesh.n_nodes
    ddofs, dvals = _dirichlet(mesh, loads)
    free = np.setdiff1d(np.arange(ndof), ddofs)
    fext_full = _external(mesh, loads)
    load_cell = loads.load_cell or loads.dirichlet[0][0]
    cell_nodes = mesh.node_set(load_cell)

    u = np.zeros(ndof)
    snaps = []
    lam_done = 0.0
    for k in range(1, loads.n_snap + 1):
        target = k / loads.n_snap
        step = target - lam_done
        cuts = 0
        while lam_done < target - 1e-14:
            lam_try = min(target, lam_done + step)
            try:
                u = _newton(mesh, p, u, lam_try, ddofs, dvals, free, fext_full, grad0, jac0, dofs,
                            rtol, atol, max_iter)
                lam_done = lam_try
            except ConvergenceError:
                cuts += 1
                if cuts > max_cuts:
                    raise ConvergenceError(f"load step {k}: Newton failed after {max_cuts} cuts") from None
                step *= 0.5
                log.info("load step %d: cutting increment to %.3g", k, step)
        snaps.append(_make_snapshot(mesh, p, u, k, lam_done, fext_full, ddofs, cell_nodes, grad0))
    return snaps


def _newton(mesh, p, u0, lam, ddofs, dvals, free, fext_full, grad0, jac0, dofs, rtol, atol, max_iter):
    u = u0.copy()
    uD = lam * dvals
    fext = lam * fext_full
    res = _assemble(mesh, u.reshape(-1, 2), p, grad0, jac0, dofs)
    if res is None:
        raise ConvergenceError("inadmissible start")
    for it in range(max_iter + 1):
        fint, K, _ = res
        R = fint - fext
        ref = max(np.linalg.norm(fint), np.linalg.norm(fext), 1e-300)
        rnorm = np.linalg.norm(R[free])
        dD = uD - u[ddofs]
        if np.all(np.abs(dD) <= 1e-14 * max(1.0, np.abs(uD).max(initial=0))) and (
                rnorm <= rtol * ref or rnorm <= atol):
            return u
        if it == max_iter:
            break
        du = np.zeros_like(u)
        du[ddofs] = dD
        rhs = -R[free] - K[free][:, ddofs] @ dD
        du[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
        alpha = 1.0
        while alpha > 1e-4:
            trial = u + alpha * du
            tres = _assemble(mesh, trial.reshape(-1, 2), p, grad0, jac0, dofs)
            if tres is not None:
                tR = tres[0] - fext
                if np.any(dD) or np.linalg.norm(tR[free]) < max(rnorm, atol):
                    break
            alpha *= 0.5
        else:
            raise ConvergenceError("line search failed")
        u, res = trial, tres
    raise ConvergenceError(f"no convergence in {max_iter} iterations")


def _make_snapshot(mesh, p, u, k, lam, fext_full, ddofs, cell_nodes, grad0):
    U = u.reshape(-1, 2)
    fint = internal_forces(mesh, U, p)
    forces = (lam * fext_full).reshape(-1, 2).copy()
    dnodes = np.unique(ddofs // 2)
    forces[dnodes] = fint[dnodes]
    F = _kinematics(mesh, U, grad0)
    lam3 = plane_stress_lambda3(F, p)
    return Snapshot(
        index=k,
        u=U.copy(),
        forces=forces,
        known=np.ones(mesh.n_nodes, dtype=bool),
        thickness_quad=lam3 * mesh.h0,
        global_force=float(fint[cell_nodes, 1].sum()),
    )


def window_mesh(mesh, window=None, force_boundary="bottom", zeta_boundary="top"):
    """Restrict ``mesh`` to the elements whose reference centroid lies in
    ``window = (y_min, y_max)``.

    The returned mesh carries the node sets ``force_boundary`` (bottom edge
    of the window) and ``zeta_boundary`` (top edge, forces unknown). Without
    a window the whole mesh is used and the two sets alias the named sets of
    the parent. Returns ``(window_mesh, parent_node_ids, element_mask)``.
    """
    if window is None:
        mask = np.ones(mesh.n_elements, dtype=bool)
        extra = {"force_boundary": mesh.node_set(force_boundary),
                 "zeta_boundary": mesh.node_set(zeta_boundary)}
        sub, used = submesh(mesh, mask, extra)
        return sub, used, mask
    y_lo, y_hi = map(float, window)
    if not y_hi > y_lo:
        raise MeshError("window must satisfy y_min < y_max")
    cy = mesh.nodes[mesh.elements][:, :, 1].mean(axis=1)
    mask = (cy > y_lo) & (cy < y_hi)
    if not mask.any():
        raise MeshError("window contains no elements")
    tol = 1e-9 * max(1.0, np.ptp(mesh.nodes))
    used = np.unique(mesh.elements[mask])
    y = mesh.nodes[used, 1]
    lo, hi = y.min(), y.max()
    extra = {"force_boundary": used[np.abs(y - lo) < tol], "zeta_boundary": used[np.abs(y - hi) < tol]}
    sub, used = submesh(mesh, mask, extra)
    return sub, used, mask


def export_raw_data(snapshots, mesh, mode="ideal", p=None, window=None, force_boundary="bottom",
                    zeta_boundary="top", meta=None):
    """Turn solved snapshots into the raw input of the identification.

    ``ideal`` keeps exact nodal forces on every window node except the
    unknown-force boundary, and the deformed thickness at the quadrature
    points. Nodes on a window cut receive the internal forces of the window
    elements, which requires the material ``p``.

    ``realistic`` keeps only displacements, the global force and a nodal
    thickness obtained by area-weighted projection of the quadrature-point
    thickness (deformed element areas), as a stereo camera pair would
    measure it.

    Returns a :class:`hyperfit.rawdata.RawDataset`.
    """
    from .rawdata import RawDataset

    if mode not in ("ideal", "realistic"):
        raise ValueError(f"unknown export mode {mode!r}")
    wmesh, used, emask = window_mesh(mesh, window, force_boundary, zeta_boundary)
    zeta = np.zeros(wmesh.n_nodes, dtype=bool)
    zeta[wmesh.node_set("zeta_boundary")] = True
    fb = wmesh.node_set("force_boundary")
    edges = edges_from_node_set(wmesh, fb)
    width = float(np.linalg.norm(wmesh.nodes[edges[:, 1]] - wmesh.nodes[edges[:, 0]], axis=1).sum())
    y = wmesh.nodes[:, 1]
    info = {
        "mode": mode,
        "force_boundary": "force_boundary",
        "zeta_boundary": "zeta_boundary",
        "h0": float(mesh.h0),
        "A0": width * float(mesh.h0),
        "l0": float(y[wmesh.node_set("zeta_boundary")].mean() - y[fb].mean()),
        "window": None if window is None else [float(v) for v in window],
        "n_snap": len(snapshots),
    }
    info.update(meta or {})

    # window nodes fully surrounded by window elements keep the applied loads
    inc_all = np.bincount(mesh.elements.ravel(), minlength=mesh.n_nodes)
    inc_win = np.bincount(mesh.elements[emask].ravel(), minlength=mesh.n_nodes)
    cut = (inc_win[used] < inc_all[used])
    if mode == "ideal" and cut.any() and p is None:
        raise ValueError("ideal export of a strict window needs the material parameters")

    out = []
    for s in snapshots:
        w = Snapshot(index=s.index, u=s.u[used].copy(), global_force=float(s.global_force))
        if mode == "ideal":
            f = s.forces[used].copy()
            if cut.any():
                f[cut] = internal_forces(mesh, s.u, p, elements=np.flatnonzero(emask))[used][cut]
            f[zeta] = 0.0
            w.forces = f
            w.known = ~zeta
            w.thickness_quad = s.thickness_quad[emask].copy()
        else:
            def_area = QUAD_WEIGHT * shape_gradients((mesh.nodes + s.u)[mesh.elements])[1]
            sub_area = def_area[emask]
            w.thickness_nodes = project_thickness_to_nodes(wmesh, s.thickness_quad[emask], sub_area)
        out.append(w)
    return RawDataset(wmesh, out, info)
