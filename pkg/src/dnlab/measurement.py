"""Dirichlet-to-Neumann data: synthesis, data-space norm, difference estimates, noise."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .potentials import PotentialField
from .solver import solve_ibvp
from .traces import BoundaryTrace, time_weights

__all__ = [
    "BoundaryTrace",
    "DnDifferenceEstimate",
    "dn_apply",
    "d32_norm",
    "d32_parts",
    "dn_diff_norm_lb",
    "add_noise",
    "NORM_VERSION",
]

# bump when the discretisation of the data-space norm changes
NORM_VERSION = "d32-v1: odd-t reflection, uniform arc resample, 2x y padding"


def dn_apply(P: PotentialField, f: BoundaryTrace, **kw) -> BoundaryTrace:
    """Neumann trace of the solution with Dirichlet data f."""
    if f.kind != "dirichlet":
        raise ValidationError("dn_apply needs dirichlet data")
    return solve_ibvp(P, f, **kw).neumann


def _arc_resample(f: BoundaryTrace) -> tuple[np.ndarray, float]:
    """Samples on a uniform arc-length grid (same node count), and its spacing."""
    cs = f.grid.cross_section
    s = cs.bnd_arc
    L = cs.perimeter
    m = s.size
    su = np.arange(m) * (L / m)
    # periodic linear interpolation weights, shared by every (t, y) row
    ext = np.concatenate([s[-1:] - L, s, s[:1] + L])
    j = np.searchsorted(ext, su, side="right") - 1
    j = np.clip(j, 0, ext.size - 2)
    w = (su - ext[j]) / (ext[j + 1] - ext[j])
    src = np.concatenate([[m - 1], np.arange(m), [0]])
    a, b = src[j], src[j + 1]
    x = f.samples
    return (1 - w) * x[..., a] + w * x[..., b], L / m


def d32_parts(f: BoundaryTrace, *, warn_tol: float = 1e-8) -> dict[str, float]:
    """Squared pieces of the data-space norm: ``h32`` and the weighted ``t``, ``tau``, ``y`` terms."""
    g = f.grid
    x = f.samples
    scale = max(float(np.abs(x).max()), 1e-300)
    if np.abs(x[0]).max() > 1e-10 * scale:
        raise ValidationError("trace does not vanish at t=0")
    if not np.any(x):
        return {"h32": 0.0, "t": 0.0, "tau": 0.0, "y": 0.0}
    u, ds = _arc_resample(f)
    nt, dt = g.nt, g.dt
    axial = g.mode == "full3d"
    dz = g.dz

    # H^{3/2,3/2}: odd reflection in t onto [0, 2T), zero padding in y
    ext = np.concatenate([u, -u[-2:0:-1]], axis=0)
    if axial:
        ny = ext.shape[1]
        ext = np.concatenate([ext, np.zeros_like(ext)], axis=1)
    F = np.fft.fftn(ext)
    wt = 2 * np.pi * np.fft.fftfreq(ext.shape[0], dt)
    wy = 2 * np.pi * np.fft.fftfreq(ext.shape[1], dz) if axial else np.zeros(1)
    ws = 2 * np.pi * np.fft.fftfreq(ext.shape[2], ds)
    Wt, Wy, Ws = np.meshgrid(wt, wy, ws, indexing="ij")
    mult = (1 + Wt**2) ** 1.5 + (1 + Wy**2 + Ws**2) ** 1.5
    cell = dt * ds * (dz if axial else 1.0)
    h32 = float(np.sum(mult * np.abs(F) ** 2)) * cell / F.size / 2.0  # /2: reflected copy

    # weighted first-derivative terms with the measure dS dt / t
    d_t = np.gradient(u, dt, axis=0)
    d_tau = (np.roll(u, -1, axis=2) - np.roll(u, 1, axis=2)) / (2 * ds)
    terms = {"t": d_t, "tau": d_tau}
    if axial:
        terms["y"] = np.gradient(u, dz, axis=1) if u.shape[1] > 1 else np.zeros_like(u)
    t = g.times
    wq = time_weights(g)
    inv = np.zeros_like(t)
    inv[1:] = wq[1:] / t[1:]
    # the t = 0 node is dropped: probe data vanish to first order there
    yw = np.ones(u.shape[1]) * (dz if axial else 1.0)
    out = {"h32": h32, "y": 0.0}
    for k, d in terms.items():
        a2 = np.abs(d) ** 2
        head = a2[0].max()
        if head > warn_tol * max(a2.max(), 1e-300):
            warnings.warn(f"d/d{k} of the trace does not vanish at t=0; the t^-1 weight is truncated",
                          RuntimeWarning, stacklevel=2)
        out[k] = float(np.einsum("n,nys,y->", inv, a2, yw) * ds)
    return out


def d32_norm(f: BoundaryTrace) -> float:
    """Data-space norm: H^{3/2,3/2} part plus t^{-1}-weighted first derivatives."""
    p = d32_parts(f)
    return float(np.sqrt(sum(p.values())))


@dataclass
class DnDifferenceEstimate:
    probe_family: list
    per_probe_ratio: np.ndarray
    norm_lb: float
    numerators: np.ndarray = field(default_factory=lambda: np.zeros(0))
    denominators: np.ndarray = field(default_factory=lambda: np.zeros(0))
    caveat: str = ("finite probe family: this is a lower bound for the operator norm, "
                   "so fitted stability exponents test the trend only")

    def to_csv(self) -> str:
        rows = ["probe,ratio"] + [f"{i},{r:.17g}" for i, r in enumerate(self.per_probe_ratio)]
        return "\n".join(rows) + "\n"


def dn_diff_norm_lb(P1: PotentialField, P2: PotentialField, probes, *, data=None) -> DnDifferenceEstimate:
    """max over probes of ``‖(Λ2 - Λ1) f‖_{L²} / ‖f‖_D`` with f the probe trace for P2."""
    from .probes import go_boundary_data

    probes = list(probes)
    if not probes:
        raise ValidationError("empty probe family")
    if P1.grid is not P2.grid:
        raise ValidationError("potentials live on different grids")
    nums, dens = [], []
    for spec in probes:
        f = go_boundary_data(spec, P2)
        if data is not None and spec in data:
            g1, g2 = data[spec]
        else:
            g1, g2 = dn_apply(P1, f), dn_apply(P2, f)
            if data is not None:
                data[spec] = (g1, g2)
        nums.append((g2 - g1).l2_norm())
        dens.append(d32_norm(f))
    nums, dens = np.asarray(nums), np.asarray(dens)
    ratios = np.where(dens > 0, nums / np.where(dens > 0, dens, 1.0), 0.0)
    return DnDifferenceEstimate(probes, ratios, float(ratios.max()), nums, dens)


def add_noise(g: BoundaryTrace, level: float, seed: int | None = None) -> BoundaryTrace:
    """Add i.i.d. complex Gaussian noise with RMS ``level * rms(g)``."""
    if level < 0:
        raise ValidationError("noise level must be non-negative")
    if level == 0:
        return BoundaryTrace(g.grid, g.samples.copy(), g.kind, dict(g.meta))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(g.samples.shape) + 1j * rng.standard_normal(g.samples.shape)
    z *= level * g.rms() / np.sqrt(2.0)
    meta = dict(g.meta, noise_level=level, noise_seed=seed)
    return BoundaryTrace(g.grid, g.samples + z, g.kind, meta)
