"""
Evaluation against the neo-Hooke ground truth: reference stresses, the
coefficient of determination, the 1D stiffness estimate, parameter sweeps and
stress responses of a trained potential along 3D deformation paths.
"""
from dataclasses import dataclass, field
import csv
import logging
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .continuum import DomainError, NeoHookeParams, is_positive_definite, neo_hooke, neo_hooke_sigma_from_b, \
    neo_hooke_T_from_C

log = logging.getLogger(__name__)

__all__ = [
    "R2Report",
    "SweepSpec",
    "strain_tensor",
    "reference_stress",
    "r2",
    "stiffness_estimate",
    "estimate_stiffness",
    "evaluate_ddi",
    "run_sweep",
    "deformation_path",
    "stress_path_compare",
    "write_csv",
    "PATHS",
    "MAX_EXCLUDED_FRACTION",
]

MAX_EXCLUDED_FRACTION = 1e-3
STRESS_COMPONENTS = ("11", "22", "12")


@dataclass
class R2Report:
    pooled: float
    components: dict
    count: int
    excluded: int = 0
    tag: str = ""


def strain_tensor(strains):
    """``(n, 4)`` strains ``(e11, e22, e33, e12)`` -> ``(n, 3, 3)`` tensors."""
    s = np.asarray(strains, dtype=float).reshape(-1, 4)
    e = np.zeros((len(s), 3, 3))
    e[:, 0, 0], e[:, 1, 1], e[:, 2, 2] = s[:, 0], s[:, 1], s[:, 2]
    e[:, 0, 1] = e[:, 1, 0] = s[:, 3]
    return e


def reference_stress(strains, p, metric):
    """Neo-Hooke stresses ``(s11, s22, s12)`` at given strains.

    ``metric="ul"`` reads Euler-Almansi strains and returns Cauchy stress
    through ``b = (1 - 2e)^-1``; ``"tl"`` reads Green-Lagrange strains and
    returns the second Piola stress through ``C = 2E + 1``. Entries whose
    reconstructed tensor is not positive definite are returned as ``nan``;
    the second return value flags the valid entries.
    """
    e = strain_tensor(strains)
    eye = np.eye(3)
    if metric == "ul":
        A = eye - 2.0 * e
    elif metric in ("tl", "tl-adapted"):
        A = eye + 2.0 * e
    else:
        raise ValueError(f"unknown metric {metric!r}")
    ok = is_positive_definite(A)
    out = np.full((len(e), 3), np.nan)
    if ok.any():
        if metric == "ul":
            S = neo_hooke_sigma_from_b(np.linalg.inv(A[ok]), p)
        else:
            S = neo_hooke_T_from_C(A[ok], p)
        out[ok] = np.column_stack([S[:, 0, 0], S[:, 1, 1], S[:, 0, 1]])
    return out, ok


def r2(pred, ref, tag=""):
    """Coefficient of determination pooled over all components (deviations
    from the global mean) plus per-component values."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError("predicted and reference values differ in shape")
    if ref.shape[0] < 2:
        raise ValueError("need at least two entries")
    ss_tot = np.sum((ref - ref.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("reference values are constant")
    pooled = 1.0 - np.sum((pred - ref) ** 2) / ss_tot
    comps = {}
    if ref.ndim == 2:
        for k in range(ref.shape[1]):
            tot = np.sum((ref[:, k] - ref[:, k].mean()) ** 2)
            name = STRESS_COMPONENTS[k] if ref.shape[1] == 3 else str(k)
            comps[name] = float(1.0 - np.sum((pred[:, k] - ref[:, k]) ** 2) / tot) if tot > 0 else float("nan")
    return R2Report(float(pooled), comps, int(ref.shape[0]), tag=tag)


def stiffness_estimate(force, A0, l0, dl):
    """1D linear-elastic modulus ``(F / A0) (l0 / dl)``."""
    if dl == 0:
        raise ValueError("zero elongation")
    return float(abs(force) / A0 * l0 / abs(dl))


def estimate_stiffness(dataset, snapshot=0):
    """Stiffness estimate from one snapshot of a raw dataset: the global
    force over the reference cross-section, times the gauge length over the
    elongation (mean 2-displacement of the unknown-force edge minus that of
    the force edge)."""
    mesh, meta = dataset.mesh, dataset.meta
    s = dataset.snapshots[snapshot]
    fb = mesh.node_set(meta.get("force_boundary", "force_boundary"))
    zb = mesh.node_set(meta.get("zeta_boundary", "zeta_boundary"))
    l0 = meta.get("l0")
    if l0 is None:
        l0 = float(mesh.nodes[zb, 1].mean() - mesh.nodes[fb, 1].mean())
    A0 = meta.get("A0")
    if A0 is None:
        A0 = float(np.ptp(mesh.nodes[fb, 0])) * mesh.h0
    dl = float(s.u[zb, 1].mean() - s.u[fb, 1].mean())
    return stiffness_estimate(s.global_force, A0, l0, dl)


def evaluate_ddi(result, p):
    """R2 of mechanical and material stresses against the reference model."""
    metric = "ul" if result.formulation == "ul" else "tl"
    ref_mech, ok_mech = reference_stress(result.strains.reshape(-1, 4), p, metric)
    mech = result.stress.reshape(-1, 3)
    used = result.weights > 0
    db = result.database
    ref_mat, ok_mat = reference_stress(db.tensor_strains[used], p, metric)
    mat = db.stress[used]
    n_bad = int((~ok_mech).sum() + (~ok_mat).sum())
    if n_bad > MAX_EXCLUDED_FRACTION * (len(ok_mech) + len(ok_mat)):
        raise DomainError(f"{n_bad} states have non-admissible strains; evaluation invalid")
    rm = r2(mech[ok_mech], ref_mech[ok_mech], tag=result.formulation)
    rm.excluded = int((~ok_mech).sum())
    rt = r2(mat[ok_mat], ref_mat[ok_mat], tag=result.formulation)
    rt.excluded = int((~ok_mat).sum())
    return {"mech": rm, "mat": rt}


@dataclass
class SweepSpec:
    """``param`` is ``"nstar-ratio"``, ``"pseudo-stiffness"`` (MPa) or
    ``"eta"``; every value is run for each formulation."""

    param: str
    values: list
    formulations: list = field(default_factory=lambda: ["ul"])

    def __post_init__(self):
        if self.param not in ("nstar-ratio", "pseudo-stiffness", "eta"):
            raise ValueError(f"unknown sweep parameter {self.param!r}")
        if not len(self.values):
            raise ValueError("sweep needs at least one value")


SWEEP_FIELDS = ["param", "value", "formulation", "r2_mech", "r2_mat", "converged", "iterations", "error"]


def run_sweep(spec, dataset, base_cfg, p, noise=None):
    """One identification per value and formulation; failures are recorded
    in the ``error`` column and the sweep continues.

    ``noise`` is the base :class:`hyperfit.noise.NoiseConfig` of an ``eta``
    sweep (``omega``, grid and seed are taken from it).
    """
    from dataclasses import replace

    from .ddi import run_ddi
    from .noise import NoiseConfig, apply_noise

    rows = []
    for value in spec.values:
        ds = dataset
        cfg = base_cfg
        setup_error = None
        try:
            if spec.param == "nstar-ratio":
                cfg = replace(base_cfg, nstar=None, nstar_ratio=float(value))
            elif spec.param == "pseudo-stiffness":
                cfg = replace(base_cfg, pseudo_stiffness=float(value))
            else:
                base = noise or NoiseConfig()
                ds = apply_noise(dataset, replace(base, eta=float(value)))
        except Exception as exc:
            setup_error = exc
        for form in spec.formulations:
            row = {"param": spec.param, "value": float(value), "formulation": form, "r2_mech": "",
                   "r2_mat": "", "converged": "", "iterations": "", "error": ""}
            try:
                if setup_error is not None:
                    raise setup_error
                res = run_ddi(ds, replace(cfg, formulation=form))
                ev = evaluate_ddi(res, p)
                row.update(r2_mech=ev["mech"].pooled, r2_mat=ev["mat"].pooled, converged=res.converged,
                           iterations=res.iterations)
            except Exception as exc:  # keep sweeping
                log.warning("sweep %s=%s (%s) failed: %s", spec.param, value, form, exc)
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def write_csv(rows, path, fields=None):
    fields = fields or (list(rows[0].keys()) if rows else [])
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return Path(path)


def _uniaxial_lateral(lam, p):
    def s22(t):
        J = lam * t * t
        return p.mu / J * t * t + 0.5 * p.lam * J - (2.0 * p.mu + p.lam) / (2.0 * J)

    return brentq(s22, 1e-3, 1e3, xtol=1e-15, rtol=1e-15)


def _plane_stress_thickness(J2, p):
    return np.sqrt((2.0 * p.mu + p.lam) / (2.0 * p.mu + p.lam * J2**2))


def deformation_path(name, stretches, p):
    """Deformation gradients ``(n, 3, 3)`` of a 3D test path.

    ``uniaxial`` and ``equibiaxial`` use the lateral stretches that make the
    reference model free of lateral stress; ``shear`` is simple shear with
    ``gamma = stretch - 1``; ``volumetric`` is ``stretch * 1``.
    """
    lam = np.asarray(stretches, dtype=float)
    F = np.zeros((len(lam), 3, 3))
    for k, l in enumerate(lam):
        if name == "uniaxial":
            t = _uniaxial_lateral(l, p)
            F[k] = np.diag([l, t, t])
        elif name == "equibiaxial":
            F[k] = np.diag([l, l, _plane_stress_thickness(l * l, p)])
        elif name == "shear":
            F[k] = np.eye(3)
            F[k, 0, 1] = l - 1.0
        elif name == "volumetric":
            F[k] = l * np.eye(3)
        else:
            raise ValueError(f"unknown path {name!r}")
    return F


PATHS = ("uniaxial", "equibiaxial", "shear", "volumetric")


def stress_path_compare(model, p, paths=PATHS, stretch_range=(0.8, 1.4), n=61):
    """Relative first-Piola errors of ``model`` against the reference along
    3D deformation paths.

    ``model`` is a :class:`hyperfit.pann.PannParams` or a callable
    ``F -> P``. Errors are normalised by the largest reference component
    along the path.
    """
    from .pann import PannParams, pann_stress

    if isinstance(model, PannParams):
        fP = lambda F: pann_stress(F, model)["P"]  # noqa: E731
    elif isinstance(model, NeoHookeParams):
        fP = lambda F: neo_hooke(F, model)["P"]  # noqa: E731
    else:
        fP = model
    lam = np.linspace(stretch_range[0], stretch_range[1], n)
    rows = []
    for name in paths:
        F = deformation_path(name, lam, p)
        P_ref = neo_hooke(F, p)["P"]
        P = fP(F)
        scale = np.max(np.abs(P_ref))
        err = np.max(np.abs(P - P_ref), axis=(1, 2)) / scale
        rows.append({"path": name, "max_rel_error": float(err.max()), "mean_rel_error": float(err.mean()),
                     "stretch_min": float(lam[0]), "stretch_max": float(lam[-1])})
    return rows
