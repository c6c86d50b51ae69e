"""
Saddle-point systems of the identification.

For a fixed mapping of quadrature points to material states the stationarity
conditions are linear in the nodal multipliers ``eta`` (one block per
snapshot) and the material stresses ``s*``::

    [ K_1           S_1 ] [ eta_1 ]   [ f_1 ]
    [      ...      ... ] [  ...  ] = [ ... ]
    [           K_n S_n ] [ eta_n ]   [ f_n ]
    [ S_1^T ... S_n^T 0 ] [  s*   ]   [  0  ]

with ``K_t = sum_g w B^T D B`` (constant over the iteration) and
``S_t = sum_g w B^T P_s(g)`` (rebuilt from the mapping).
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["SaddleSolution", "coupling_matrices", "assemble_dense", "solve_saddle_system", "equilibrium_residual"]


@dataclass
class SaddleSolution:
    """``eta`` is ``(S, n_active)``; ``sstar`` holds the stresses of the
    ``states`` that took part in the solve (rows in the same order)."""

    eta: np.ndarray
    sstar: np.ndarray
    states: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def coupling_matrices(prob, mapping, states):
    """Sparse ``S_t`` of shape ``(n_active, 3 len(states))`` for each snapshot."""
    size = max(int(np.max(mapping, initial=-1)), int(np.max(states, initial=-1))) + 1
    col = np.full(size, -1, dtype=np.int64)
    col[states] = np.arange(len(states))
    n = prob.n_active
    out = []
    for t in range(prob.n_snap):
        vals = prob.weight[t][:, None, None] * np.swapaxes(prob.B[t], -1, -2)  # (Q, 6, 3)
        rows = np.repeat(prob.amap[prob.edofs][:, :, None], 3, axis=2)
        c = col[mapping[t]]
        cols = np.broadcast_to(3 * c[:, None, None] + np.arange(3)[None, None, :], rows.shape)
        keep = (rows >= 0) & (c[:, None, None] >= 0)
        out.append(sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, 3 * len(states))))
    return out


def assemble_dense(prob, Ss):
    """Full system matrix and right-hand side as dense arrays (test oracle)."""
    n, S = prob.n_active, prob.n_snap
    m = Ss[0].shape[1]
    A = np.zeros((S * n + m, S * n + m))
    rhs = np.zeros(S * n + m)
    for t in range(S):
        sl = slice(t * n, (t + 1) * n)
        A[sl, sl] = prob.K[t].toarray()
        A[sl, S * n:] = Ss[t].toarray()
        A[S * n:, sl] = Ss[t].toarray().T
        rhs[sl] = prob.active_forces(t)
    return A, rhs


def _split(x, n, S):
    return x[:S * n].reshape(S, n), x[S * n:].reshape(-1, 3)


def _solve_dense(prob, Ss):
    A, rhs = assemble_dense(prob, Ss)
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return x, 1


def _solve_schur(prob, Ss):
    """Exact elimination of the multipliers with the factorised ``K_t``."""
    S, n = prob.n_snap, prob.n_active
    m = Ss[0].shape[1]
    Z = np.zeros((m, m))
    r = np.zeros(m)
    X, Y = [], []
    for t in range(S):
        lu = prob.lu(t)
        cols = np.unique(Ss[t].indices)
        St = Ss[t][:, cols].toarray()
        Xt = lu.solve(St) if cols.size else np.zeros((n, 0))
        yt = lu.solve(prob.active_forces(t))
        Z[np.ix_(cols, cols)] += St.T @ Xt
        r[cols] += St.T @ yt
        X.append((cols, Xt))
        Y.append(yt)
    try:
        sstar = sla.cho_solve(sla.cho_factor(Z), r)
    except np.linalg.LinAlgError:
        sstar = np.linalg.lstsq(Z, r, rcond=None)[0]
    eta = np.empty((S, n))
    for t in range(S):
        cols, Xt = X[t]
        eta[t] = Y[t] - Xt @ sstar[cols]
    return np.concatenate([eta.ravel(), sstar]), 1


def _operator(prob, Ss):
    S, n = prob.n_snap, prob.n_active
    m = Ss[0].shape[1]
    St = [s.T.tocsr() for s in Ss]

    def matvec(x):
        x = np.ravel(x)
        eta, s = x[:S * n].reshape(S, n), x[S * n:]
        y = np.empty_like(x)
        z = np.zeros(m)
        for t in range(S):
            y[t * n:(t + 1) * n] = prob.K[t] @ eta[t] + Ss[t] @ s
            z += St[t] @ eta[t]
        y[S * n:] = z
        return y

    return spla.LinearOperator((S * n + m, S * n + m), matvec=matvec, dtype=float)


def _preconditioner(prob, Ss):
    """Block-diagonal SPD preconditioner: exact ``K_t`` solves and the Schur
    complement approximated with the diagonal of ``K_t``."""
    S, n = prob.n_snap, prob.n_active
    m = Ss[0].shape[1]
    Z = sp.csr_matrix((m, m))
    for t in range(S):
        dinv = sp.diags(1.0 / prob.K[t].diagonal())
        Z = Z + (Ss[t].T @ dinv @ Ss[t])
    Z = Z.toarray()
    scale = np.max(np.abs(np.diag(Z)), initial=1.0)
    Z[np.diag_indices_from(Z)] += 1e-12 * scale
    try:
        fac = sla.cho_factor(Z)
        zsolve = lambda r: sla.cho_solve(fac, r)  # noqa: E731
    except np.linalg.LinAlgError:
        Zp = np.linalg.pinv(Z)
        zsolve = lambda r: Zp @ r  # noqa: E731
    lus = [prob.lu(t) for t in range(S)]

    def matvec(x):
        x = np.ravel(x)
        y = np.empty_like(x)
        for t in range(S):
            y[t * n:(t + 1) * n] = lus[t].solve(x[t * n:(t + 1) * n])
        y[S * n:] = zsolve(x[S * n:])
        return y

    return spla.LinearOperator((S * n + m, S * n + m), matvec=matvec, dtype=float)


def _solve_minres(prob, Ss, tol, x0, maxiter=5000):
    A = _operator(prob, Ss)
    M = _preconditioner(prob, Ss)
    S, n = prob.n_snap, prob.n_active
    m = Ss[0].shape[1]
    b = np.concatenate([np.concatenate([prob.active_forces(t) for t in range(S)]), np.zeros(m)])
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0
    count = [0]

    def cb(_):
        count[0] += 1

    # the preconditioned residual that MINRES monitors overestimates the
    # accuracy by a few orders here, so stop well below ``tol`` and check
    # the true residual
    x = x0
    rtol = 1e-3 * tol
    for _ in range(5):
        x, _info = spla.minres(A, b, x0=x, M=M, rtol=rtol, maxiter=maxiter, callback=cb)
        if np.linalg.norm(b - A @ x) <= tol * bnorm:
            break
        rtol *= 0.1
    return x, count[0]


def solve_saddle_system(prob, mapping, states=None, method="minres", tol=1e-10, x0=None):
    """Solve for the multipliers and the material stresses of ``states``.

    ``states`` defaults to the states used by ``mapping``; unused states are
    eliminated from the system. ``x0`` is an optional warm start (a previous
    :class:`SaddleSolution`).
    """
    mapping = np.asarray(mapping)
    if states is None:
        states = np.unique(mapping)
    states = np.asarray(states, dtype=np.int64)
    Ss = coupling_matrices(prob, mapping, states)
    if method == "dense":
        x, it = _solve_dense(prob, Ss)
    elif method == "schur":
        x, it = _solve_schur(prob, Ss)
    elif method == "minres":
        start = None
        if x0 is not None:
            sstar0 = np.zeros((len(states), 3))
            lookup = {int(z): k for k, z in enumerate(x0.states)}
            for k, z in enumerate(states.tolist()):
                if z in lookup:
                    sstar0[k] = x0.sstar[lookup[z]]
            start = np.concatenate([x0.eta.ravel(), sstar0.ravel()])
        x, it = _solve_minres(prob, Ss, tol, start)
    else:
        raise ValueError(f"unknown method {method!r}")
    eta, sstar = _split(x, prob.n_active, prob.n_snap)
    sol = SaddleSolution(eta, sstar, states, it)
    return sol


def equilibrium_residual(prob, stress):
    """Relative residual ``|f - sum w B^T s|`` over the dofs with prescribed forces."""
    num = 0.0
    den = 0.0
    for t in range(prob.n_snap):
        fe = prob.weight[t][:, None] * np.einsum("qia,qi->qa", prob.B[t], stress[t])
        fint = np.zeros(2 * prob.mesh.n_nodes)
        np.add.at(fint, prob.edofs.ravel(), fe.ravel())
        act = prob.amap >= 0
        f = prob.forces[t].ravel()[act]
        num += np.sum((f - fint[act]) ** 2)
        den += np.sum(f**2)
    return float(np.sqrt(num) / max(np.sqrt(den), 1e-300))
