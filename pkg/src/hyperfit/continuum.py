"""
Finite-strain kinematics, invariants, stress-measure transformations and the
compressible neo-Hookean reference material.

All functions are vectorised over leading axes: a deformation gradient is an
array of shape ``(..., 3, 3)``. Units are mm-N-MPa throughout.

Symmetric second-order tensors can be stored as 6-vectors in the ordering
``(11, 22, 33, 23, 13, 12)`` holding the plain tensor components (no factor of
two on the off-diagonal entries). Fourth-order tensors with major and minor
symmetry are stored as 6x6 matrices of plain components in the same ordering.
Contractions in that storage have to account for the multiplicity of the
off-diagonal entries, see :data:`VOIGT_MULTIPLICITY`.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "NeoHookeParams",
    "VOIGT_PAIRS",
    "VOIGT_MULTIPLICITY",
    "to_voigt",
    "from_voigt",
    "fourth_to_voigt",
    "kinematics",
    "invariants",
    "stress_transform",
    "push_forward",
    "neo_hooke",
    "neo_hooke_sigma_from_b",
    "neo_hooke_T_from_C",
    "pullback_pseudo_stiffness",
    "symmetric_identity",
    "is_positive_definite",
]

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
VOIGT_MULTIPLICITY = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])

PD_PIVOT_TOL = 1e-12


class DomainError(ValueError):
    """Raised when a tensor argument lies outside the admissible set."""


@dataclass(frozen=True)
class NeoHookeParams:
    """Initial Young's modulus ``E`` (MPa) and Poisson's ratio ``nu``."""

    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise DomainError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise DomainError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")

    @property
    def mu(self):
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self):
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))


def to_voigt(A):
    """Symmetric tensors ``(..., 3, 3)`` -> 6-vectors ``(..., 6)``."""
    A = np.asarray(A, dtype=float)
    return np.stack([A[..., i, j] for i, j in VOIGT_PAIRS], axis=-1)


def from_voigt(v):
    v = np.asarray(v, dtype=float)
    A = np.empty(v.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(VOIGT_PAIRS):
        A[..., i, j] = v[..., k]
        A[..., j, i] = v[..., k]
    return A


def fourth_to_voigt(A):
    """Fourth-order tensors ``(..., 3, 3, 3, 3)`` -> ``(..., 6, 6)`` plain components."""
    A = np.asarray(A, dtype=float)
    out = np.empty(A.shape[:-4] + (6, 6))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for K, (k, l) in enumerate(VOIGT_PAIRS):
            out[..., I, K] = A[..., i, j, k, l]
    return out


def symmetric_identity():
    """The fourth-order identity on symmetric tensors, shape ``(3, 3, 3, 3)``."""
    d = np.eye(3)
    return 0.5 * (np.einsum("km,ln->klmn", d, d) + np.einsum("kn,lm->klmn", d, d))


def is_positive_definite(A, tol=PD_PIVOT_TOL):
    """Cholesky-style test on symmetric matrices, vectorised over leading axes.

    A pivot counts as positive only if it exceeds ``tol`` times the largest
    diagonal entry.
    """
    A = np.array(A, dtype=float)
    n = A.shape[-1]
    scale = np.max(np.abs(np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    scale = np.where(scale > 0, scale, 1.0)
    ok = np.ones(A.shape[:-2], dtype=bool)
    L = np.zeros_like(A)
    for j in range(n):
        piv = A[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        ok &= piv > tol * scale
        d = np.sqrt(np.where(piv > 0, piv, 1.0))
        L[..., j, j] = d
        for i in range(j + 1, n):
            L[..., i, j] = (A[..., i, j] - np.sum(L[..., i, :j] * L[..., j, :j], axis=-1)) / d
    return ok


def _check_defgrad(F):
    F = np.asarray(F, dtype=float)
    if F.shape[-2:] != (3, 3):
        raise DomainError(f"deformation gradient must have trailing shape (3, 3), got {F.shape}")
    J = np.linalg.det(F)
    if not np.all(np.isfinite(J)) or np.any(J <= 0):
        raise DomainError("deformation gradient must have a positive determinant")
    return F, J


def kinematics(F):
    """Deformation tensors and strains of a deformation gradient.

    Returns
    -------
    dict
        ``C`` and ``b`` (right/left Cauchy-Green), ``E`` (Green-Lagrange),
        ``e`` (Euler-Almansi) and ``J``.
    """
    F, J = _check_defgrad(F)
    Ft = np.swapaxes(F, -1, -2)
    C = Ft @ F
    b = F @ Ft
    eye = np.eye(3)
    return {
        "C": C,
        "b": b,
        "E": 0.5 * (C - eye),
        "e": 0.5 * (eye - np.linalg.inv(b)),
        "J": J,
    }


def invariants(C):
    """``(I1, I2, I3, I1*)`` of a symmetric positive definite tensor.

    ``I1* = -2 sqrt(I3) = -2J`` is the additional invariant fed to the
    neural network potential.
    """
    C = np.asarray(C, dtype=float)
    if not np.all(is_positive_definite(C)):
        raise DomainError("invariants require a symmetric positive definite tensor")
    I1 = np.trace(C, axis1=-2, axis2=-1)
    I2 = 0.5 * (I1**2 - np.einsum("...ij,...ji->...", C, C))
    I3 = np.linalg.det(C)
    return np.stack([I1, I2, I3, -2.0 * np.sqrt(I3)], axis=-1)


def stress_transform(sigma, F):
    """Pull back a Cauchy stress: returns Kirchhoff ``tau``, first Piola ``P``
    and second Piola ``T``."""
    F, J = _check_defgrad(F)
    sigma = np.asarray(sigma, dtype=float)
    Finv = np.linalg.inv(F)
    Jx = J[..., None, None]
    tau = Jx * sigma
    P = tau @ np.swapaxes(Finv, -1, -2)
    T = Finv @ P
    return {"tau": tau, "P": P, "T": T}


def push_forward(T, F):
    """Cauchy stress from a second Piola-Kirchhoff stress."""
    F, J = _check_defgrad(F)
    return F @ np.asarray(T, dtype=float) @ np.swapaxes(F, -1, -2) / J[..., None, None]


def neo_hooke_T_from_C(C, p):
    C = np.asarray(C, dtype=float)
    I3 = np.linalg.det(C)
    cof = I3[..., None, None] * np.linalg.inv(C)
    coef = 0.5 * p.lam - (2.0 * p.mu + p.lam) / (2.0 * I3)
    return p.mu * np.eye(3) + coef[..., None, None] * cof


def neo_hooke_sigma_from_b(b, p):
    b = np.asarray(b, dtype=float)
    J = np.sqrt(np.linalg.det(b))
    coef = 0.5 * p.lam * J - (2.0 * p.mu + p.lam) / (2.0 * J)
    return (p.mu / J)[..., None, None] * b + coef[..., None, None] * np.eye(3)


def neo_hooke(F, p):
    """Energy density and stresses of the two-parameter compressible neo-Hooke model.

    ``psi = 1/2 (mu (I1 - ln I3 - 3) + lam/2 (I3 - ln I3 - 1))``.
    """
    k = kinematics(F)
    C = k["C"]
    I1 = np.trace(C, axis1=-2, axis2=-1)
    I3 = k["J"] ** 2
    lnI3 = np.log(I3)
    psi = 0.5 * (p.mu * (I1 - lnI3 - 3.0) + 0.5 * p.lam * (I3 - lnI3 - 1.0))
    T = neo_hooke_T_from_C(C, p)
    sigma = push_forward(T, F)
    return {"psi": psi, "T": T, "sigma": sigma, "P": np.asarray(F) @ T}


def pullback_pseudo_stiffness(C_scale, F):
    """Pull-back of the isotropic pseudo stiffness ``C_scale * 1`` to the
    reference configuration.

    ``CC_KLMN = C J / 2 (Cinv_KM Cinv_LN + Cinv_KN Cinv_LM)``, returned as a
    full ``(..., 3, 3, 3, 3)`` array.
    """
    if not C_scale > 0:
        raise DomainError("pseudo stiffness scale must be positive")
    k = kinematics(F)
    Ci = np.linalg.inv(k["C"])
    J = k["J"][..., None, None, None, None]
    return 0.5 * C_scale * J * (
        np.einsum("...km,...ln->...klmn", Ci, Ci) + np.einsum("...kn,...lm->...klmn", Ci, Ci)
    )
