"""
Physics-augmented neural network (PANN) hyperelastic potential.

The potential is a single-hidden-layer input-convex network in the invariants
``(I1, I2, I3, I1*)`` with ``I1* = -2J``, plus analytic corrections::

    psi = psi_nn(I) + psi_en + psi_gr(J) + psi_str(J)
    psi_nn = sum_a W_a softplus(w_a . (I1, I2, I3) + w*_a I1* + b_a)
    psi_en = -psi_nn(I at F = 1)
    psi_gr = lambda_gr (J + 1/J - 2)**2
    psi_str = -n (J - 1)

where ``n = 2 (psi_1 + 2 psi_2 + psi_3 - psi_*)`` at ``F = 1`` (``psi_x`` the
partial derivatives of ``psi_nn``) makes the stress vanish in the reference
configuration. Non-negative ``W`` and ``w`` together with the convex,
non-decreasing softplus make ``psi_nn`` convex in the invariants.

Stresses follow in closed form from the chain rule through the invariants.
Calibration minimises the mean squared Frobenius error of the stress (second
Piola-Kirchhoff against right Cauchy-Green, or Cauchy against left
Cauchy-Green) under box constraints ``W, w >= 0``.
"""
from dataclasses import dataclass, field
from pathlib import Path
import logging

import numpy as np
from scipy.optimize import minimize

from .continuum import DomainError, invariants, is_positive_definite
from .rng import substream

log = logging.getLogger(__name__)

__all__ = [
    "PannParams",
    "PannData",
    "PannError",
    "softplus",
    "pann_energy",
    "pann_energy_nn",
    "pann_stress",
    "pann_stress_from_C",
    "pann_cauchy_from_b",
    "pann_loss_and_grad",
    "data_from_database",
    "normalization_constant",
    "train",
    "save_model",
    "load_model",
    "FORMAT",
]

FORMAT = "pann-v1"
# invariants (I1, I2, I3, I1*) of the undeformed state
I_REF = np.array([3.0, 3.0, 1.0, -2.0])
# d n / d psi_gamma at the reference state
N_COEF = np.array([2.0, 4.0, 2.0, -2.0])


class PannError(RuntimeError):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class PannParams:
    """Network weights. ``w`` has shape ``(width, 3)`` and multiplies
    ``(I1, I2, I3)``; ``wstar`` multiplies ``I1* = -2J``."""

    W: np.ndarray
    w: np.ndarray
    wstar: np.ndarray
    b: np.ndarray
    lambda_gr: float
    metric: str = "ul"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float).ravel()
        n = self.W.size
        self.w = np.asarray(self.w, dtype=float).reshape(n, 3)
        self.wstar = np.asarray(self.wstar, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.wstar.size != n or self.b.size != n:
            raise ValueError("inconsistent layer widths")
        if not self.lambda_gr > 0:
            raise ValueError("lambda_gr must be positive")

    @property
    def width(self):
        return self.W.size

    @property
    def v(self):
        """Input weights on ``(I1, I2, I3, I1*)``, shape ``(width, 4)``."""
        return np.column_stack([self.w, self.wstar])

    def to_vector(self):
        return np.concatenate([self.W, self.w.ravel(), self.wstar, self.b])

    @classmethod
    def from_vector(cls, x, width, lambda_gr, metric="ul"):
        x = np.asarray(x, dtype=float)
        n = width
        return cls(x[:n], x[n:4 * n], x[4 * n:5 * n], x[5 * n:6 * n], lambda_gr, metric)

    @staticmethod
    def bounds(width):
        n = width
        return [(0.0, None)] * (4 * n) + [(None, None)] * (2 * n)

    def is_admissible(self):
        return bool(np.all(self.W >= 0) and np.all(self.w >= 0))

    @classmethod
    def random(cls, width, lambda_gr, rng, metric="ul"):
        a = 1.0 / np.sqrt(width)
        return cls(
            rng.uniform(0.0, a, width),
            rng.uniform(0.0, a, (width, 3)),
            rng.uniform(-a, a, width),
            rng.uniform(-a, a, width),
            lambda_gr,
            metric,
        )


def _hidden(x, p):
    """Pre-activations ``(..., width)`` for invariant vectors ``x (..., 4)``."""
    return x @ p.v.T + p.b


def _dpsi(x, p):
    """Partial derivatives of ``psi_nn`` w.r.t. ``(I1, I2, I3, I1*)``."""
    return (_sigmoid(_hidden(x, p)) * p.W) @ p.v


def pann_energy_nn(x, p):
    """``psi_nn`` for invariant vectors ``x = (I1, I2, I3, I1*)``."""
    return softplus(_hidden(np.asarray(x, dtype=float), p)) @ p.W


def normalization_constant(p):
    """Stress normalisation constant ``n``."""
    return float(N_COEF @ _dpsi(I_REF, p))


def _growth(J, lam):
    g = J + 1.0 / J - 2.0
    return lam * g**2, 2.0 * lam * g * (1.0 - 1.0 / J**2)


def pann_energy(C, p):
    """Energy density ``psi`` (MPa) for right Cauchy-Green tensors ``C``."""
    x = invariants(C)
    J = np.sqrt(x[..., 2])
    psi_gr, _ = _growth(J, p.lambda_gr)
    n = normalization_constant(p)
    return pann_energy_nn(x, p) - pann_energy_nn(I_REF, p) + psi_gr - n * (J - 1.0)


def _basis_T(C, x):
    """Second Piola stress basis ``dI_gamma/dC * 2`` and ``J C^-1``."""
    I1, I3 = x[..., 0], x[..., 2]
    J = np.sqrt(I3)
    eye = np.broadcast_to(np.eye(3), C.shape)
    Ci = np.linalg.inv(C)
    JCi = J[..., None, None] * Ci
    G = np.stack([
        2.0 * eye,
        2.0 * (I1[..., None, None] * eye - C),
        2.0 * I3[..., None, None] * Ci,
        -2.0 * JCi,
    ], axis=-3)
    return G, JCi


def _basis_sigma(b, x):
    I1, I3 = x[..., 0], x[..., 2]
    J = np.sqrt(I3)
    eye = np.broadcast_to(np.eye(3), b.shape)
    c = (2.0 / J)[..., None, None]
    G = np.stack([
        c * b,
        c * (I1[..., None, None] * b - b @ b),
        c * I3[..., None, None] * eye,
        -2.0 * eye,
    ], axis=-3)
    return G, eye


def _stress(G, N, x, p):
    J = np.sqrt(x[..., 2])
    _, dgr = _growth(J, p.lambda_gr)
    coef = _dpsi(x, p)
    n = normalization_constant(p)
    return np.einsum("...g,...gij->...ij", coef, G) + (dgr - n)[..., None, None] * N


def pann_stress_from_C(C, p):
    """Second Piola-Kirchhoff stress ``T(C)``."""
    C = np.asarray(C, dtype=float)
    x = invariants(C)
    G, N = _basis_T(C, x)
    return _stress(G, N, x, p)


def pann_cauchy_from_b(b, p):
    """Cauchy stress ``sigma(b)``."""
    b = np.asarray(b, dtype=float)
    x = invariants(b)
    G, N = _basis_sigma(b, x)
    return _stress(G, N, x, p)


def pann_stress(F, p):
    """Stresses ``T``, ``sigma`` and ``P`` for deformation gradients ``F``."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise DomainError("deformation gradient must have a positive determinant")
    Ft = np.swapaxes(F, -1, -2)
    T = pann_stress_from_C(Ft @ F, p)
    P = F @ T
    sigma = P @ Ft / J[..., None, None]
    return {"T": T, "sigma": sigma, "P": P}


@dataclass
class PannData:
    """Calibration data: deformation tensors ``X`` (``C`` for the metric
    ``"tl"``, ``b`` for ``"ul"``), stresses ``Y`` (``T`` or ``sigma``) and a
    boolean ``test`` mask."""

    X: np.ndarray
    Y: np.ndarray
    metric: str = "ul"
    test: np.ndarray = None
    _cache: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 3, 3)
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, 3, 3)
        if len(self.X) != len(self.Y) or len(self.X) == 0:
            raise ValueError("need a non-empty dataset with matching X and Y")
        if self.metric not in ("ul", "tl"):
            raise ValueError(f"metric must be 'ul' or 'tl', got {self.metric!r}")
        if self.test is None:
            self.test = np.zeros(len(self.X), dtype=bool)
        self.test = np.asarray(self.test, dtype=bool)

    def __len__(self):
        return len(self.X)

    def split(self, test_fraction, rng):
        """Random calibration/test split (in place), returns ``self``."""
        n = len(self.X)
        nt = int(round(test_fraction * n))
        nt = min(max(nt, 0), n - 1)
        test = np.zeros(n, dtype=bool)
        test[rng.permutation(n)[:nt]] = True
        self.test = test
        self._cache = None
        return self

    def subset(self, which):
        mask = self.test if which == "test" else ~self.test
        return PannData(self.X[mask], self.Y[mask], self.metric)

    def features(self):
        if self._cache is None:
            x = invariants(self.X)
            G, N = _basis_T(self.X, x) if self.metric == "tl" else _basis_sigma(self.X, x)
            self._cache = {"x": x, "G": G, "N": N}
        return self._cache

    def predict(self, p):
        f = self.features()
        return _stress(f["G"], f["N"], f["x"], p)


def data_from_database(strains, stresses, metric):
    """Calibration data from database entries.

    ``strains`` are ``(n, 4)`` tensor components ``(e11, e22, e33, e12)``
    (Euler-Almansi for ``"ul"``, Green-Lagrange for ``"tl"``), ``stresses``
    ``(n, 3)`` in-plane ``(s11, s22, s12)``; out-of-plane stresses are zero.
    Entries whose deformation tensor is not positive definite are dropped.
    """
    s = np.asarray(strains, dtype=float).reshape(-1, 4)
    e = np.zeros((len(s), 3, 3))
    e[:, 0, 0], e[:, 1, 1], e[:, 2, 2] = s[:, 0], s[:, 1], s[:, 2]
    e[:, 0, 1] = e[:, 1, 0] = s[:, 3]
    eye = np.eye(3)
    A = eye - 2.0 * e if metric == "ul" else eye + 2.0 * e
    ok = is_positive_definite(A)
    X = np.linalg.inv(A[ok]) if metric == "ul" else A[ok]
    sig = np.asarray(stresses, dtype=float).reshape(-1, 3)[ok]
    Y = np.zeros((len(sig), 3, 3))
    Y[:, 0, 0], Y[:, 1, 1] = sig[:, 0], sig[:, 1]
    Y[:, 0, 1] = Y[:, 1, 0] = sig[:, 2]
    return PannData(X, Y, metric)


def pann_loss_and_grad(p, data):
    """Mean squared Frobenius stress error and its gradient w.r.t.
    ``p.to_vector()``."""
    f = data.features()
    x, G, N = f["x"], f["G"], f["N"]
    n = len(x)
    J = np.sqrt(x[:, 2])
    _, dgr = _growth(J, p.lambda_gr)
    z = _hidden(x, p)
    s = _sigmoid(z)
    V = p.v
    coef = (s * p.W) @ V
    z0 = _hidden(I_REF, p)
    s0 = _sigmoid(z0)
    coef0 = (s0 * p.W) @ V
    nconst = N_COEF @ coef0
    pred = np.einsum("pg,pgij->pij", coef, G) + (dgr - nconst)[:, None, None] * N
    R = pred - data.Y
    mse = float(np.sum(R**2) / n)
    # sensitivities of the mse w.r.t. the invariant derivatives
    q = (2.0 / n) * np.einsum("pij,pgij->pg", R, G)
    q0 = -(2.0 / n) * np.einsum("pij,pij->", R, N) * N_COEF
    grad = _chain(q, x, s, p) + _chain(q0[None, :], I_REF[None, :], s0[None, :], p)
    return mse, grad


def _chain(q, x, s, p):
    """Gradient of ``sum_p q_pg psi_g(x_p)`` w.r.t. the parameter vector."""
    V = p.v
    ds = s * (1.0 - s)
    Q = q @ V.T  # (n, width)
    gW = np.sum(s * Q, axis=0)
    gV = p.W[:, None] * (s.T @ q + (ds * Q).T @ x)
    gb = p.W * np.sum(ds * Q, axis=0)
    return np.concatenate([gW, gV[:, :3].ravel(), gV[:, 3], gb])


def r2_score(pred, ref):
    ref = np.asarray(ref).ravel()
    pred = np.asarray(pred).ravel()
    ss_tot = np.sum((ref - ref.mean()) ** 2)
    return float(1.0 - np.sum((pred - ref) ** 2) / ss_tot) if ss_tot > 0 else float("nan")


@dataclass
class TrainReport:
    restarts: list
    best: int
    cal_mse: float
    test_mse: float
    cal_r2: float
    test_r2: float


def train(data, width=8, lambda_gr=1e-2, restarts=5, maxiter=3000, seed=0, gtol=1e-12):
    """Calibrate a PANN with bound-constrained L-BFGS-B from several seeded
    starting points; returns ``(params, report)`` for the best calibration
    error."""
    cal = data.subset("cal")
    test = data.subset("test") if data.test.any() else None
    bounds = PannParams.bounds(width)
    results = []
    best = None
    for k in range(restarts):
        rng = substream(seed, "pann-init", k)
        p0 = PannParams.random(width, lambda_gr, rng, data.metric)

        def fun(v):
            return pann_loss_and_grad(PannParams.from_vector(v, width, lambda_gr, data.metric), cal)

        try:
            res = minimize(fun, p0.to_vector(), jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": maxiter, "maxfun": 2 * maxiter, "ftol": 1e-15, "gtol": gtol})
        except (FloatingPointError, ValueError) as exc:
            results.append({"restart": k, "ok": False, "message": str(exc)})
            continue
        ok = bool(np.isfinite(res.fun))
        results.append({"restart": k, "ok": ok, "mse": float(res.fun), "nit": int(res.nit),
                        "message": str(res.message)})
        log.info("restart %d: mse %.4e after %d iterations", k, res.fun, res.nit)
        if ok and (best is None or res.fun < best[0]):
            best = (float(res.fun), res.x, k)
    if best is None:
        raise PannError(f"all {restarts} restarts failed: {results}")
    p = PannParams.from_vector(best[1], width, lambda_gr, data.metric)
    # clip round-off violations of the bounds
    p.W = np.maximum(p.W, 0.0)
    p.w = np.maximum(p.w, 0.0)
    pc = cal.predict(p)
    report = TrainReport(
        restarts=results,
        best=best[2],
        cal_mse=float(np.sum((pc - cal.Y) ** 2) / len(cal)),
        test_mse=float("nan"),
        cal_r2=r2_score(pc, cal.Y),
        test_r2=float("nan"),
    )
    if test is not None:
        pt = test.predict(p)
        report.test_mse = float(np.sum((pt - test.Y) ** 2) / len(test))
        report.test_r2 = r2_score(pt, test.Y)
    return p, report


def _fmt(a):
    return " ".join(repr(float(v)) for v in np.ravel(a))


def save_model(p, path):
    lines = [
        f"format {FORMAT}",
        "units mm-N-MPa",
        f"metric {p.metric}",
        f"width {p.width}",
        f"lambda_gr {float(p.lambda_gr)!r}",
        f"W {_fmt(p.W)}",
        f"w {_fmt(p.w)}",
        f"wstar {_fmt(p.wstar)}",
        f"b {_fmt(p.b)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    kv = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        key, _, val = ln.partition(" ")
        kv[key] = val.strip()
    if kv.get("format") != FORMAT:
        raise PannError(f"{path}: unsupported model format {kv.get('format')!r}")
    if kv.get("units") != "mm-N-MPa":
        raise PannError(f"{path}: unsupported unit system {kv.get('units')!r}")
    n = int(kv["width"])

    def arr(key):
        return np.array([float(v) for v in kv[key].split()])

    return PannParams(arr("W"), arr("w").reshape(n, 3), arr("wstar"), arr("b"), float(kv["lambda_gr"]),
                      kv.get("metric", "ul"))
