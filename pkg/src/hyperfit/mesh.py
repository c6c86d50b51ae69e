"""
Linear-triangle plane meshes: geometry operators, single-point quadrature,
thickness projections, consistent edge loads, a built-in plate generator and
the line-oriented mesh text format.

Mesh text format (indices 0-based)::

    nodes N elements M thickness h0
    x y                      # N lines
    i j k                    # M lines
    boundary <name>: i0 i1 ...   # any number of named node sets
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

__all__ = [
    "MeshError",
    "TriMesh",
    "Ellipse",
    "Connectivity",
    "QUAD_WEIGHT",
    "shape_gradients",
    "build_connectivity",
    "bmatrix",
    "bmatrix_total_lagrange",
    "deformation_gradient",
    "project_thickness_to_nodes",
    "project_thickness_to_quadpoints",
    "edges_from_node_set",
    "traction_to_nodal_forces",
    "generate_plate_mesh",
    "submesh",
    "read_mesh",
    "write_mesh",
]

# one-point Gauss rule on the reference triangle
QUAD_WEIGHT = 0.5


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    nodes: np.ndarray
    elements: np.ndarray
    h0: float
    boundary_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 3)
        self.boundary_sets = {
            k: np.unique(np.asarray(v, dtype=np.int64)) for k, v in self.boundary_sets.items()
        }
        if not self.h0 > 0:
            raise MeshError(f"reference thickness must be positive, got {self.h0}")
        n = len(self.nodes)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError("element connectivity references a missing node")
        for name, idx in self.boundary_sets.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise MeshError(f"boundary set {name!r} references a missing node")
        _, jac = shape_gradients(self.nodes[self.elements])
        bad = np.flatnonzero(jac <= 0)
        if bad.size:
            raise MeshError(f"elements with non-positive area or wrong orientation: {bad[:10].tolist()}")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def areas(self):
        return QUAD_WEIGHT * shape_gradients(self.nodes[self.elements])[1]

    def node_set(self, name):
        try:
            return self.boundary_sets[name]
        except KeyError:
            raise MeshError(f"mesh has no boundary set {name!r}") from None


def shape_gradients(coords):
    """Gradients of the linear shape functions and the Jacobian determinant.

    Parameters
    ----------
    coords : ndarray, shape (M, 3, 2)
        Element node coordinates.

    Returns
    -------
    grad : ndarray, shape (M, 3, 2)
        ``dN_i/dx_j`` for the three element nodes.
    jac : ndarray, shape (M,)
        Determinant of the map from the reference triangle (twice the area).
    """
    coords = np.asarray(coords, dtype=float)
    # dN/dxi for N = (1 - xi1 - xi2, xi1, xi2)
    dN = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    Jm = np.einsum("eia,ib->eab", coords, dN)  # dx_a/dxi_b
    jac = Jm[:, 0, 0] * Jm[:, 1, 1] - Jm[:, 0, 1] * Jm[:, 1, 0]
    safe = np.where(jac != 0, jac, 1.0)
    inv = np.empty_like(Jm)
    inv[:, 0, 0] = Jm[:, 1, 1] / safe
    inv[:, 1, 1] = Jm[:, 0, 0] / safe
    inv[:, 0, 1] = -Jm[:, 0, 1] / safe
    inv[:, 1, 0] = -Jm[:, 1, 0] / safe
    grad = np.einsum("ib,ebj->eij", dN, inv)
    return grad, jac


def deformation_gradient(mesh, u):
    """In-plane deformation gradients ``F_ab = delta_ab + sum_alpha N_alpha,b u_a^alpha``."""
    grad0, _ = shape_gradients(mesh.nodes[mesh.elements])
    ue = np.asarray(u, dtype=float)[mesh.elements]
    return np.eye(2) + np.einsum("eia,eib->eab", ue, grad0)


def bmatrix(grad):
    """Symmetric-gradient operator in engineering Voigt form.

    Maps the element nodal vector ``(v1_x, v1_y, v2_x, ...)`` to
    ``(d11, d22, 2 d12)``; shape ``(M, 3, 6)``.
    """
    M = grad.shape[0]
    B = np.zeros((M, 3, 6))
    B[:, 0, 0::2] = grad[:, :, 0]
    B[:, 1, 1::2] = grad[:, :, 1]
    B[:, 2, 0::2] = grad[:, :, 1]
    B[:, 2, 1::2] = grad[:, :, 0]
    return B


def bmatrix_total_lagrange(grad0, F):
    """Variation of the Green-Lagrange strain ``(dE11, dE22, 2 dE12)`` w.r.t.
    nodal displacements at deformation ``F`` (M, 2, 2); shape ``(M, 3, 6)``."""
    M = grad0.shape[0]
    B = np.zeros((M, 3, 6))
    for c in range(2):
        B[:, 0, c::2] = F[:, None, c, 0] * grad0[:, :, 0]
        B[:, 1, c::2] = F[:, None, c, 1] * grad0[:, :, 1]
        B[:, 2, c::2] = F[:, None, c, 0] * grad0[:, :, 1] + F[:, None, c, 1] * grad0[:, :, 0]
    return B


@dataclass
class Connectivity:
    """Per-element geometric operators of one configuration.

    ``B`` maps element nodal vectors to engineering-Voigt in-plane tensors,
    ``jac`` is the Jacobian determinant of the configuration the quadrature
    runs over and ``F`` the in-plane deformation gradient (identity for the
    reference configuration).
    """

    grad: np.ndarray
    jac: np.ndarray
    B: np.ndarray
    F: np.ndarray
    weight: float = QUAD_WEIGHT


def build_connectivity(mesh, u=None, config="reference"):
    """Geometric operators for the reference or a deformed configuration.

    ``config`` is ``"reference"``, ``"deformed"`` (spatial gradients on the
    current triangle, updated Lagrangian) or ``"total_lagrange"`` (reference
    integration with the deformation-dependent operator).
    """
    grad0, jac0 = shape_gradients(mesh.nodes[mesh.elements])
    if u is None:
        F = np.broadcast_to(np.eye(2), (mesh.n_elements, 2, 2)).copy()
    else:
        u = np.asarray(u, dtype=float).reshape(mesh.n_nodes, 2)
        F = np.eye(2) + np.einsum("eia,eib->eab", u[mesh.elements], grad0)
    if config == "reference":
        return Connectivity(grad0, jac0, bmatrix(grad0), F)
    if config == "total_lagrange":
        return Connectivity(grad0, jac0, bmatrix_total_lagrange(grad0, F), F)
    if config == "deformed":
        if u is None:
            raise MeshError("deformed configuration needs nodal displacements")
        grad, jac = shape_gradients((mesh.nodes + u)[mesh.elements])
        bad = np.flatnonzero(jac <= 0)
        if bad.size:
            raise MeshError(f"inverted elements in deformed configuration: {bad[:10].tolist()}")
        return Connectivity(grad, jac, bmatrix(grad), F)
    raise ValueError(f"unknown configuration {config!r}")


def _node_element_incidence(mesh):
    from scipy.sparse import csr_matrix

    M = mesh.n_elements
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(M), 3)
    return csr_matrix((np.ones(3 * M), (rows, cols)), shape=(mesh.n_nodes, M))


def project_thickness_to_nodes(mesh, elem_thickness, areas):
    """Area-weighted average of element values over the elements attached to each node."""
    h = np.asarray(elem_thickness, dtype=float)
    S = np.asarray(areas, dtype=float)
    if np.any(h <= 0):
        raise MeshError("thickness values must be positive")
    inc = _node_element_incidence(mesh)
    wsum = inc @ S
    if np.any(wsum <= 0):
        orphan = np.flatnonzero(wsum <= 0)
        raise MeshError(f"nodes without attached elements: {orphan[:10].tolist()}")
    return (inc @ (S * h)) / wsum


def project_thickness_to_quadpoints(mesh, nodal_thickness):
    return np.asarray(nodal_thickness, dtype=float)[mesh.elements].mean(axis=1)


def _boundary_edges(mesh):
    e = mesh.elements
    edges = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return edges[counts[inv.ravel()] == 1]


def edges_from_node_set(mesh, node_set):
    """Boundary edges with both end nodes in ``node_set``, as an ``(n, 2)`` array."""
    nodes = set(np.asarray(node_set).tolist())
    return np.array([ed for ed in _boundary_edges(mesh) if ed[0] in nodes and ed[1] in nodes],
                    dtype=np.int64).reshape(-1, 2)


def traction_to_nodal_forces(mesh, edges, traction, h0=None):
    """Consistent nodal loads of a constant traction on a polyline of edges.

    Each edge of reference length ``L`` receives ``t * h0 * L / 2`` at both
    ends. A scalar traction acts in the 2-direction.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    h0 = mesh.h0 if h0 is None else h0
    t = np.asarray(traction, dtype=float)
    if t.ndim == 0:
        t = np.array([0.0, float(t)])
    _check_polyline(edges)
    f = np.zeros((mesh.n_nodes, 2))
    if not len(edges):
        return f
    L = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    share = 0.5 * h0 * L[:, None] * t[None, :]
    np.add.at(f, edges[:, 0], share)
    np.add.at(f, edges[:, 1], share)
    return f


def _check_polyline(edges):
    if len(edges) == 0:
        return
    adj = {}
    for a, b in edges.tolist():
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    if any(len(v) > 2 for v in adj.values()):
        raise MeshError("edge set branches; expected a polyline")
    start = next(iter(adj))
    seen, stack = {start}, [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(adj):
        raise MeshError("edge set is disconnected")


@dataclass(frozen=True)
class Ellipse:
    """Elliptical hole with centre ``(cx, cy)``, semi-axes ``a``, ``b`` and
    rotation ``angle`` (radians)."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float = 0.0

    def local(self, p):
        c, s = np.cos(self.angle), np.sin(self.angle)
        d = np.asarray(p, dtype=float) - [self.cx, self.cy]
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)

    def level(self, p):
        q = self.local(p)
        return np.hypot(q[..., 0] / self.a, q[..., 1] / self.b)

    def outline(self, spacing):
        """Points on the ellipse, roughly equidistant at ``spacing``."""
        t = np.linspace(0.0, 2 * np.pi, 4097)
        xy = np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=1)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
        n = max(8, int(np.ceil(s[-1] / spacing)))
        tt = np.interp(np.linspace(0.0, s[-1], n + 1)[:-1], s, t)
        c, si = np.cos(self.angle), np.sin(self.angle)
        x, y = self.a * np.cos(tt), self.b * np.sin(tt)
        return np.stack([self.cx + c * x - si * y, self.cy + si * x + c * y], axis=1)


def _structured(nx, ny, width, height, x0=0.0, y0=0.0):
    xs = np.linspace(x0, x0 + width, nx + 1)
    ys = np.linspace(y0, y0 + height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx[j, i], idx[j, i + 1], idx[j + 1, i + 1], idx[j + 1, i]
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return nodes, np.array(tris, dtype=np.int64)


def generate_plate_mesh(width, height, holes=(), h=1.0, h0=1.0, origin=(0.0, 0.0)):
    """Triangulate a rectangular plate, optionally with elliptical holes.

    Without holes the result is a structured grid with alternating diagonals.
    With holes, grid nodes closer than ``h/2`` to a hole are removed, the hole
    outlines are sampled at spacing ``h`` and the point cloud is
    re-triangulated; triangles spanned by outline nodes of a single hole are
    discarded.

    Boundary sets ``bottom``, ``top``, ``left``, ``right``, ``holes`` and
    ``hole_<i>`` are attached.
    """
    x0, y0 = origin
    nx = max(1, int(round(width / h)))
    ny = max(1, int(round(height / h)))
    nodes, tris = _structured(nx, ny, width, height, x0, y0)
    holes = list(holes)
    hx, hy = width / nx, height / ny
    hole_ids = np.full(len(nodes), -1)
    if holes:
        spacing = min(hx, hy)
        for k, el in enumerate(holes):
            outline = el.outline(spacing)
            if (outline[:, 0].min() <= x0 + spacing or outline[:, 0].max() >= x0 + width - spacing
                    or outline[:, 1].min() <= y0 + spacing or outline[:, 1].max() >= y0 + height - spacing):
                raise MeshError(f"hole {k} is not strictly inside the plate")
            for j, other in enumerate(holes[:k]):
                if np.any(other.level(outline) <= 1.0 + 1e-9) or np.any(el.level(other.outline(spacing)) <= 1.0):
                    raise MeshError(f"holes {j} and {k} overlap")
        keep = np.ones(len(nodes), dtype=bool)
        outlines = []
        for el in holes:
            outline = el.outline(spacing)
            dense = el.outline(spacing / 20.0)
            dist, _ = cKDTree(dense).query(nodes)
            keep &= (el.level(nodes) > 1.0) & (dist >= 0.5 * spacing)
            outlines.append(outline)
        grid = nodes[keep]
        pts = [grid]
        ids = [np.full(len(grid), -1)]
        for k, outline in enumerate(outlines):
            pts.append(outline)
            ids.append(np.full(len(outline), k))
        nodes = np.concatenate(pts)
        hole_ids = np.concatenate(ids)
        tris = Delaunay(nodes).simplices.astype(np.int64)
        same_hole = (hole_ids[tris] >= 0).all(axis=1) & (hole_ids[tris[:, 0]] == hole_ids[tris[:, 1]]) \
            & (hole_ids[tris[:, 1]] == hole_ids[tris[:, 2]])
        cent = nodes[tris].mean(axis=1)
        inside = np.zeros(len(tris), dtype=bool)
        for el in holes:
            inside |= el.level(cent) < 1.0
        tris = tris[~same_hole & ~inside]
        _, jac = shape_gradients(nodes[tris])
        flip = jac < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        _, jac = shape_gradients(nodes[tris])
        tris = tris[jac > 1e-10 * hx * hy]
        used = np.unique(tris)
        remap = -np.ones(len(nodes), dtype=np.int64)
        remap[used] = np.arange(len(used))
        nodes, hole_ids, tris = nodes[used], hole_ids[used], remap[tris]

    tol = 1e-9 * max(width, height)
    sets = {
        "bottom": np.flatnonzero(np.abs(nodes[:, 1] - y0) < tol),
        "top": np.flatnonzero(np.abs(nodes[:, 1] - (y0 + height)) < tol),
        "left": np.flatnonzero(np.abs(nodes[:, 0] - x0) < tol),
        "right": np.flatnonzero(np.abs(nodes[:, 0] - (x0 + width)) < tol),
        "holes": np.flatnonzero(hole_ids >= 0),
    }
    for k in range(len(holes)):
        sets[f"hole_{k}"] = np.flatnonzero(hole_ids == k)
    return TriMesh(nodes, tris, h0, sets)


def submesh(mesh, element_mask, boundary_sets=None):
    """Restrict a mesh to a subset of elements.

    Returns the new mesh and the array mapping new node indices to old ones.
    Boundary sets of the parent are carried over (restricted to kept nodes);
    ``boundary_sets`` adds sets given in parent numbering.
    """
    tris = mesh.elements[np.asarray(element_mask)]
    used = np.unique(tris)
    remap = -np.ones(mesh.n_nodes, dtype=np.int64)
    remap[used] = np.arange(len(used))
    sets = {}
    for name, idx in {**mesh.boundary_sets, **(boundary_sets or {})}.items():
        r = remap[np.asarray(idx, dtype=np.int64)]
        sets[name] = r[r >= 0]
    return TriMesh(mesh.nodes[used], remap[tris], mesh.h0, sets), used


def write_mesh(mesh, path):
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements} thickness {mesh.h0!r}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.elements.tolist()]
    for name, idx in mesh.boundary_sets.items():
        lines.append(f"boundary {name}: " + " ".join(map(str, idx.tolist())))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    text = Path(path).read_text().splitlines()
    lines = [ln.split("#", 1)[0].strip() for ln in text]
    lines = [ln for ln in lines if ln]
    head = lines[0].split()
    if len(head) != 6 or head[0] != "nodes" or head[2] != "elements" or head[4] != "thickness":
        raise MeshError(f"{path}: malformed header {lines[0]!r}")
    n, m, h0 = int(head[1]), int(head[3]), float(head[5])
    if len(lines) < 1 + n + m:
        raise MeshError(f"{path}: expected {n} node and {m} element lines")
    nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(n, 2)
    elements = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n:1 + n + m]],
                        dtype=np.int64).reshape(m, 3)
    sets = {}
    for ln in lines[1 + n + m:]:
        if not ln.startswith("boundary "):
            raise MeshError(f"{path}: unexpected line {ln!r}")
        name, _, rest = ln[len("boundary "):].partition(":")
        sets[name.strip()] = np.array([int(v) for v in rest.split()], dtype=np.int64)
    return TriMesh(nodes, elements, h0, sets)
