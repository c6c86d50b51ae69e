"""
Measurement-noise imitation.

The global force gets one multiplicative factor per snapshot drawn from
``U[1 - omega, 1 + omega]``. Displacements and thickness get spatially
correlated noise: a Gaussian random field with power spectrum
``exp(-ell**2 |k|**2)`` is sampled on a square grid, cropped to the aspect
ratio of the deformed specimen, normalised to ``max |f| = 1`` and bilinearly
interpolated to the deformed nodes. Amplitudes are ``eta * dx`` for the
displacements and ``2 eta * dx`` for the thickness, which is measured from
both faces of the specimen.
"""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .rng import substream

__all__ = ["NoiseConfig", "grf_generate", "grf_crop", "apply_force_noise", "apply_field_noise", "apply_noise"]

COMPONENTS = ("u1", "u2", "h")


@dataclass(frozen=True)
class NoiseConfig:
    """``omega`` relative force-noise half width, ``eta`` displacement noise
    factor, ``dx`` geometry dimension (mm), ``grid`` pixels per side and
    ``ell`` correlation length (default ``1 / grid``)."""

    omega: float = 0.0
    eta: float = 0.0
    dx: float = 100.0
    grid: int = 1024
    ell: float = None
    seed: int = 0

    def __post_init__(self):
        if self.omega < 0 or self.eta < 0:
            raise ValueError("noise levels must be non-negative")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        _check_grid(self.grid)
        if self.ell is not None and not self.ell > 0:
            raise ValueError("correlation length must be positive")

    @property
    def length(self):
        return 1.0 / self.grid if self.ell is None else self.ell


def _check_grid(N):
    if N < 2 or (N & (N - 1)) != 0:
        raise ValueError(f"grid size must be a power of two, got {N}")


def grf_generate(N, ell, rng):
    """Unnormalised ``N x N`` Gaussian random field.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed. Wave vectors
    are ``2 pi`` times the integer FFT frequencies, so ``ell = 1/N`` gives a
    correlation of a few pixels.
    """
    _check_grid(N)
    if not ell > 0:
        raise ValueError("correlation length must be positive")
    rng = np.random.default_rng(rng)
    k = 2.0 * np.pi * np.fft.fftfreq(N, d=1.0 / N)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    amp = np.exp(-0.5 * ell**2 * k2)
    eta = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return np.real(np.fft.ifft2(amp * eta))


def grf_crop(field, aspect):
    """Crop a square field at offset zero to ``ny / nx = aspect`` and
    normalise to ``max |f| = 1``. Rows index ``y``."""
    N = field.shape[0]
    if aspect >= 1.0:
        ny, nx = N, max(2, int(round(N / aspect)))
    else:
        ny, nx = max(2, int(round(N * aspect))), N
    f = field[:ny, :nx]
    m = np.max(np.abs(f))
    return f / m if m > 0 else f


def _field_on_points(points, N, ell, rng):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    f = grf_crop(grf_generate(N, ell, rng), span[1] / span[0])
    ys = np.linspace(lo[1], lo[1] + span[1], f.shape[0])
    xs = np.linspace(lo[0], lo[0] + span[0], f.shape[1])
    interp = RegularGridInterpolator((ys, xs), f, method="linear", bounds_error=True)
    vals = interp(points[:, ::-1])
    # interpolation of a field bounded by one stays bounded by one
    return np.clip(vals, -1.0, 1.0)


def apply_force_noise(snapshots, omega, seed):
    """Copies of ``snapshots`` with multiplicatively perturbed global forces."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    out = []
    for s in snapshots:
        c = _copy(s)
        if omega > 0:
            n = substream(seed, "noise-force", s.index).uniform(1.0 - omega, 1.0 + omega)
            c.global_force = float(n * s.global_force)
        out.append(c)
    return out


def apply_field_noise(snapshots, mesh, eta, dx, seed, grid=1024, ell=None):
    """Copies of ``snapshots`` with correlated displacement and thickness noise.

    One independent field per snapshot and component (``u1``, ``u2``, ``h``)
    is evaluated at the deformed nodes (nodal thickness) or at the deformed
    element centroids (quadrature-point thickness).
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    ell = 1.0 / grid if ell is None else ell
    out = []
    for s in snapshots:
        c = _copy(s)
        if eta > 0:
            x = mesh.nodes + s.u
            amp = eta * dx
            for a in (0, 1):
                rng = substream(seed, "noise-field", s.index, a)
                c.u[:, a] = s.u[:, a] + amp * _field_on_points(x, grid, ell, rng)
            rng = substream(seed, "noise-field", s.index, 2)
            if s.thickness_nodes is not None:
                c.thickness_nodes = s.thickness_nodes + 2.0 * amp * _field_on_points(x, grid, ell, rng)
            elif s.thickness_quad is not None:
                cent = x[mesh.elements].mean(axis=1)
                pts = np.concatenate([x, cent])
                vals = _field_on_points(pts, grid, ell, rng)[len(x):]
                c.thickness_quad = s.thickness_quad + 2.0 * amp * vals
        out.append(c)
    return out


def apply_noise(dataset, cfg):
    """Noisy copy of a :class:`hyperfit.rawdata.RawDataset`."""
    ds = dataset.copy()
    snaps = apply_force_noise(ds.snapshots, cfg.omega, cfg.seed)
    snaps = apply_field_noise(snaps, ds.mesh, cfg.eta, cfg.dx, cfg.seed, cfg.grid, cfg.length)
    ds.snapshots = snaps
    ds.meta = dict(ds.meta, noise={"omega": cfg.omega, "eta": cfg.eta, "dx": cfg.dx,
                                   "grid": cfg.grid, "ell": cfg.length, "seed": cfg.seed})
    return ds


def _copy(s):
    from dataclasses import replace

    return replace(
        s,
        u=s.u.copy(),
        forces=None if s.forces is None else s.forces.copy(),
        known=None if s.known is None else s.known.copy(),
        thickness_quad=None if s.thickness_quad is None else s.thickness_quad.copy(),
        thickness_nodes=None if s.thickness_nodes is None else s.thickness_nodes.copy(),
    )
