"""Admissible potential pairs: construction, validation and Sobolev norms.

Potentials are built from compactly supported bumps with the profile
``(1 - r^2)^p`` on ``r < 1``.  The default ``p = 3`` is exactly C^2, which is
the regularity the stability theory asks for, and its derivatives have closed
forms that the tests use as oracles.  Fields keep their bump list so they can
be evaluated off the lattice exactly; fields produced by spectral operations
fall back to cubic interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .domain import WaveguideGrid
from .errors import ValidationError

__all__ = [
    "Bump",
    "PotentialField",
    "AdmissibilityReport",
    "bump_value",
    "bump_derivatives",
    "make_bump_potential",
    "zero_potential",
    "check_admissible",
    "sobolev_norm_slice",
    "divergence_free_project",
    "curl2d",
    "vector_from_curl",
    "w2inf_norm",
]

KINDS = ("A0", "A", "A_rot", "Phi")


@dataclass(frozen=True)
class Bump:
    """One compactly supported bump.

    ``kind`` selects the target: ``A0`` and ``Phi`` are scalar, ``A`` is a
    constant vector times the profile, ``A_rot`` is the rotated gradient of a
    scalar stream-function bump (divergence free by construction).
    """

    kind: str
    center: tuple[float, ...]
    width: float
    amplitude: tuple[float, float] | float
    power: int = 3

    def scaled(self, s: float) -> "Bump":
        if isinstance(self.amplitude, tuple):
            amp: tuple[float, float] | float = tuple(s * a for a in self.amplitude)  # type: ignore[assignment]
        else:
            amp = s * self.amplitude
        return replace(self, amplitude=amp)


def _q(pts: np.ndarray, b: Bump, y: np.ndarray | float | None):
    c = b.center
    d1 = pts[..., 0] - c[0]
    d2 = pts[..., 1] - c[1]
    r2 = d1 * d1 + d2 * d2
    dy = None
    if len(c) == 3:
        yy = 0.0 if y is None else y
        dy = yy - c[2]
        r2 = r2 + dy * dy
    return d1, d2, dy, 1.0 - r2 / (b.width * b.width)


def bump_value(pts: np.ndarray, b: Bump, y=None, power: int | None = None) -> np.ndarray:
    """Scalar profile ``(1 - r^2)^p`` of bump ``b`` at points (..., 2)."""
    p = b.power if power is None else power
    _, _, _, q = _q(pts, b, y)
    return np.where(q > 0, np.maximum(q, 0.0) ** p, 0.0)


def bump_derivatives(pts: np.ndarray, b: Bump, y=None, power: int | None = None):
    """Value, gradient (2, ...) and Hessian (2, 2, ...) of the profile in x."""
    p = b.power if power is None else power
    d1, d2, _, q = _q(pts, b, y)
    w2 = b.width * b.width
    inside = q > 0
    qc = np.where(inside, q, 0.0)
    val = qc**p
    g = -2.0 * p * qc ** (p - 1) / w2
    grad = np.stack([g * d1, g * d2])
    hq = 4.0 * p * (p - 1) * qc ** max(p - 2, 0) / (w2 * w2) if p >= 2 else 0.0 * qc
    d = (d1, d2)
    hess = np.empty((2, 2) + np.shape(q))
    for i in range(2):
        for j in range(2):
            hess[i, j] = hq * d[i] * d[j] + (g if i == j else 0.0)
    return val, grad, hess


def _third_derivs(pts, b: Bump, y=None, power=None):
    """Third x-derivatives of the profile, shape (2, 2, 2, ...)."""
    p = b.power if power is None else power
    d1, d2, _, q = _q(pts, b, y)
    w2 = b.width * b.width
    qc = np.where(q > 0, q, 0.0)
    c2 = 4.0 * p * (p - 1) * qc ** max(p - 2, 0) / w2**2
    c3 = -8.0 * p * (p - 1) * (p - 2) * qc ** max(p - 3, 0) / w2**3 if p >= 3 else 0 * qc
    d = (d1, d2)
    out = np.empty((2, 2, 2) + np.shape(q))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                t = c3 * d[i] * d[j] * d[k]
                t = t + c2 * ((j == k) * d[i] + (i == k) * d[j] + (i == j) * d[k])
                out[i, j, k] = t
    return out


def _bump_fields(pts: np.ndarray, b: Bump, y=None):
    """Contribution of one bump to (A0, A1, A2, Phi) at points."""
    if b.kind == "A_rot":
        _, g, _ = bump_derivatives(pts, b, y)
        z = np.zeros_like(g[0])
        return z, -b.amplitude * g[1], b.amplitude * g[0], z
    v = bump_value(pts, b, y)
    z = np.zeros_like(v)
    if b.kind == "A0":
        return b.amplitude * v, z, z, z
    if b.kind == "Phi":
        return z, z, z, b.amplitude * v
    return z, b.amplitude[0] * v, b.amplitude[1] * v, z


@dataclass(frozen=True, eq=False)
class PotentialField:
    """The pair (A0, A, Phi) sampled on the waveguide lattice.

    ``A0``, ``Phi`` have shape ``grid.shape``; ``A`` has shape ``(2,) + grid.shape``.
    """

    grid: WaveguideGrid
    A0: np.ndarray
    A: np.ndarray
    Phi: np.ndarray
    support_radius_x: float = 0.0
    support_radius_y: float = 0.0
    bumps: tuple[Bump, ...] | None = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- arithmetic ----------------------------------------------------
    def _combine(self, other: "PotentialField", s: float) -> "PotentialField":
        if other.grid is not self.grid:
            raise ValidationError("potential fields live on different grids")
        bumps = None
        if self.bumps is not None and other.bumps is not None:
            bumps = tuple(self.bumps) + tuple(b.scaled(s) for b in other.bumps)
        return PotentialField(
            grid=self.grid, A0=self.A0 + s * other.A0, A=self.A + s * other.A,
            Phi=self.Phi + s * other.Phi,
            support_radius_x=max(self.support_radius_x, other.support_radius_x),
            support_radius_y=max(self.support_radius_y, other.support_radius_y),
            bumps=bumps,
        )

    def __add__(self, other: "PotentialField") -> "PotentialField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "PotentialField") -> "PotentialField":
        return self._combine(other, -1.0)

    def scaled(self, s: float) -> "PotentialField":
        bumps = None if self.bumps is None else tuple(b.scaled(s) for b in self.bumps)
        return replace(self, A0=s * self.A0, A=s * self.A, Phi=s * self.Phi, bumps=bumps,
                       _cache={})

    def __neg__(self) -> "PotentialField":
        return self.scaled(-1.0)

    def reflected(self) -> "PotentialField":
        """Potential with the sign of A0 flipped (the adjoint operator's coefficients)."""
        bumps = None
        if self.bumps is not None:
            bumps = tuple(b.scaled(-1.0) if b.kind == "A0" else b for b in self.bumps)
        return replace(self, A0=-self.A0, bumps=bumps, _cache={})

    def with_A_sign(self, s: float) -> "PotentialField":
        bumps = None
        if self.bumps is not None:
            bumps = tuple(b.scaled(s) if b.kind in ("A", "A_rot") else b for b in self.bumps)
        return replace(self, A=s * self.A, bumps=bumps, _cache={})

    def only(self, *kinds: str) -> "PotentialField":
        """Copy keeping only the listed components (``A0``, ``A``, ``Phi``)."""
        z = np.zeros_like
        bumps = None
        if self.bumps is not None:
            keep = set(kinds) | ({"A_rot"} if "A" in kinds else set())
            bumps = tuple(b for b in self.bumps if b.kind in keep)
        return replace(
            self,
            A0=self.A0 if "A0" in kinds else z(self.A0),
            A=self.A if "A" in kinds else z(self.A),
            Phi=self.Phi if "Phi" in kinds else z(self.Phi),
            bumps=bumps, _cache={},
        )

    # -- derived coefficient arrays ------------------------------------
    @property
    def analytic(self) -> bool:
        return self.bumps is not None

    def divA(self) -> np.ndarray:
        """Centered-difference x-divergence of A on the lattice."""
        if "divA" not in self._cache:
            g = self.grid
            self._cache["divA"] = (_cdiff(self.A[0], 1, g.dx) + _cdiff(self.A[1], 2, g.dy))
        return self._cache["divA"]

    def potential_term(self) -> np.ndarray:
        """Zero-order coefficient |A|^2 + A0^2 + Phi."""
        return self.A[0] ** 2 + self.A[1] ** 2 + self.A0**2 + self.Phi

    def linf(self) -> float:
        """Sup of the Hermitian length of (A0, iA)."""
        return float(np.sqrt(self.A0**2 + self.A[0] ** 2 + self.A[1] ** 2).max())

    # -- off-lattice evaluation ----------------------------------------
    def evaluate(self, pts: np.ndarray, y=None):
        """(A0, A1, A2, Phi) at points of shape (..., 2), zero outside the support."""
        pts = np.asarray(pts, dtype=float)
        if self.bumps is not None:
            out = [np.zeros(pts.shape[:-1]) for _ in range(4)]
            for b in self.bumps:
                for k, v in enumerate(_bump_fields(pts, b, y)):
                    out[k] = out[k] + v
            return tuple(out)
        from .kernels import interp_cubic

        g = self.grid
        k = _axial_index(g, y)
        res = []
        for arr in (self.A0, self.A[0], self.A[1], self.Phi):
            res.append(interp_cubic(arr[k], g.cross_section.x1[0], g.cross_section.x2[0],
                                    g.dx, g.dy, pts))
        return tuple(res)

    def ray_coefficient(self, theta: np.ndarray, pts: np.ndarray, y=None, sign: int = -1):
        """``A0 + sign * i * theta . A`` at points; sign=-1 gives (1,-theta).(A0, iA)."""
        a0, a1, a2, _ = self.evaluate(pts, y)
        return a0 + sign * 1j * (theta[0] * a1 + theta[1] * a2)


def _axial_index(g: WaveguideGrid, y) -> int:
    if g.mode == "slice" or y is None:
        return 0
    return int(np.clip(np.rint((float(y) + g.y_extent) / g.dz), 0, g.ny_axis - 1))


def _cdiff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    # centered difference with periodic wrap; fields vanish near the box edge
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)


def zero_potential(grid: WaveguideGrid) -> PotentialField:
    z = np.zeros(grid.shape)
    return PotentialField(grid=grid, A0=z, A=np.zeros((2,) + grid.shape), Phi=z.copy())


def make_bump_potential(
    grid: WaveguideGrid,
    centers: Sequence[Sequence[float]],
    amplitudes: Sequence,
    widths: Sequence[float],
    which: str | Sequence[str],
    *,
    power: int | None = None,
) -> PotentialField:
    """Sum of bumps sampled on ``grid``.

    In slice mode centers are 2-D and the field is y-independent; in full3d
    mode centers carry a third (axial) coordinate and bumps are balls.
    """
    n = len(centers)
    if not (len(amplitudes) == len(widths) == n):
        raise ValidationError("centers, amplitudes and widths must have equal length")
    kinds = [which] * n if isinstance(which, str) else list(which)
    cs = grid.cross_section
    dim = 2 if grid.mode == "slice" else 3
    bumps = []
    for c, a, w, k in zip(centers, amplitudes, widths, kinds):
        if k not in KINDS:
            raise ValidationError(f"unknown bump kind {k!r}")
        w = float(w)
        if not w > 0:
            raise ValidationError(f"bump width must be positive, got {w}")
        c = tuple(float(v) for v in c)
        if len(c) != dim:
            raise ValidationError(f"bump center needs {dim} coordinates in {grid.mode} mode")
        depth = -float(cs.distance(np.array(c[:2])))
        if not depth > w:
            raise ValidationError(
                f"bump at {c[:2]} with width {w} overflows the cross-section (depth {depth:.4g})"
            )
        if dim == 3 and not abs(c[2]) + w < grid.y_extent:
            raise ValidationError("bump overflows the axial extent")
        p = power if power is not None else (4 if k == "A_rot" else 3)
        if k == "A":
            a = tuple(float(v) for v in np.broadcast_to(np.asarray(a, float), (2,)))
        else:
            a = float(a)
        bumps.append(Bump(kind=k, center=c, width=w, amplitude=a, power=p))
    return from_bumps(grid, bumps)


def from_bumps(grid: WaveguideGrid, bumps: Iterable[Bump]) -> PotentialField:
    bumps = tuple(bumps)
    cs = grid.cross_section
    X1, X2 = cs.node_positions()
    pts = np.stack([X1, X2], axis=-1)
    A0 = np.zeros(grid.shape)
    A = np.zeros((2,) + grid.shape)
    Phi = np.zeros(grid.shape)
    cen = np.array(cs.params.get("center", (0.0, 0.0)) if cs.kind != "mask"
                   else (X1[cs.interior].mean(), X2[cs.interior].mean()))
    rx = ry = 0.0
    for b in bumps:
        for k, y in enumerate(grid.axial):
            a0, a1, a2, ph = _bump_fields(pts, b, y if grid.mode == "full3d" else None)
            A0[k] += a0
            A[0, k] += a1
            A[1, k] += a2
            Phi[k] += ph
        rx = max(rx, float(np.hypot(*(np.array(b.center[:2]) - cen))) + b.width)
        if len(b.center) == 3:
            ry = max(ry, abs(b.center[2]) + b.width)
    if grid.mode == "full3d":
        A0[[0, -1]] = 0.0
        A[:, [0, -1]] = 0.0
        Phi[[0, -1]] = 0.0
    return PotentialField(grid=grid, A0=A0, A=A, Phi=Phi, support_radius_x=rx,
                          support_radius_y=ry, bumps=bumps)


# -- norms -------------------------------------------------------------------

def w2inf_norm(f: np.ndarray, dx: float, dy: float) -> float:
    """max over |alpha| <= 2 of sup |d^alpha f| (x-derivatives, centered stencils)."""
    f = np.asarray(f, dtype=float)
    vals = [np.abs(f).max()]
    fx = _cdiff(f, -2, dx)
    fy = _cdiff(f, -1, dy)
    vals += [np.abs(fx).max(), np.abs(fy).max()]
    fxx = (np.roll(f, -1, -2) - 2 * f + np.roll(f, 1, -2)) / dx**2
    fyy = (np.roll(f, -1, -1) - 2 * f + np.roll(f, 1, -1)) / dy**2
    fxy = _cdiff(fx, -1, dy)
    vals += [np.abs(fxx).max(), np.abs(fyy).max(), np.abs(fxy).max()]
    return float(max(vals))


def sobolev_norm_slice(
    f: np.ndarray, s: float, dx: float, dy: float | None = None, *, autopad: bool = True
) -> float:
    """Bessel-potential norm ``||<D>^s f||_{L^2(R^2)}`` of a lattice function.

    The array must hold the function with a zero collar at least as wide as the
    support radius, otherwise periodization leaks; with ``autopad`` the array
    is padded as needed, without it an error reports the required padding.
    """
    dy = dx if dy is None else dy
    f = np.asarray(f)
    if f.ndim != 2:
        raise ValidationError("sobolev_norm_slice expects a 2-D array")
    mag = np.abs(f)
    if mag.max() == 0:
        return 0.0
    nz = np.argwhere(mag > 1e-14 * mag.max())
    lo, hi = nz.min(0), nz.max(0)
    radius = np.ceil((hi - lo + 1) / 2).astype(int)
    have = np.minimum(lo, np.array(f.shape) - 1 - hi)
    need = np.maximum(radius - have, 0)
    if np.any(need > 0):
        if not autopad:
            raise ValidationError(
                f"insufficient padding: support radius {tuple(radius)} cells, "
                f"have {tuple(have)}, pad by {tuple(need)}"
            )
        f = np.pad(f, [(int(n), int(n)) for n in need])
    n1, n2 = f.shape
    F = np.fft.fft2(f)
    k1 = 2 * np.pi * np.fft.fftfreq(n1, dx)
    k2 = 2 * np.pi * np.fft.fftfreq(n2, dy)
    w = (1.0 + k1[:, None] ** 2 + k2[None, :] ** 2) ** s
    tot = (np.abs(F) ** 2 * w).sum() * dx * dy / (n1 * n2)
    return float(math.sqrt(tot))


def _modified_wavenumbers(shape, dx, dy):
    k1 = 2 * np.pi * np.fft.fftfreq(shape[-2], dx)
    k2 = 2 * np.pi * np.fft.fftfreq(shape[-1], dy)
    return np.sin(k1 * dx)[:, None] / dx, np.sin(k2 * dy)[None, :] / dy


def divergence_free_project(A: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Remove the x-gradient part of a 2-vector field, slice by slice.

    Works with the centered-difference symbols so that the centered divergence
    of the output vanishes and the centered curl is unchanged, to rounding.
    ``A`` has shape ``(2, ..., n1, n2)``.
    """
    A = np.asarray(A, dtype=float)
    F1 = np.fft.fft2(A[0])
    F2 = np.fft.fft2(A[1])
    k1, k2 = _modified_wavenumbers(A.shape, dx, dy)
    kk = k1 * k1 + k2 * k2
    safe = np.where(kk > 0, kk, 1.0)
    proj = np.where(kk > 0, (k1 * F1 + k2 * F2) / safe, 0.0)
    G1 = F1 - k1 * proj
    G2 = F2 - k2 * proj
    return np.stack([np.fft.ifft2(G1).real, np.fft.ifft2(G2).real])


def curl2d(A: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Centered-difference ``d1 A2 - d2 A1`` on the last two axes."""
    A = np.asarray(A)
    return _cdiff(A[1], -2, dx) - _cdiff(A[0], -1, dy)


def vector_from_curl(c: np.ndarray, dx: float, dy: float, pad: int = 2) -> np.ndarray:
    """Divergence-free A with centered curl ``c``, via a stream function on a padded lattice.

    Inverts the centered-difference symbols, so ``curl2d`` of the result
    returns ``c`` up to the modes those symbols cannot see.
    """
    c = np.asarray(c, dtype=float)
    n1, n2 = c.shape[-2:]
    F = np.fft.fft2(c, s=(pad * n1, pad * n2))
    k1, k2 = _modified_wavenumbers(F.shape, dx, dy)
    kk = k1 * k1 + k2 * k2
    psi = np.where(kk > 0, -F / np.where(kk > 0, kk, 1.0), 0.0)
    A1 = np.fft.ifft2(-1j * k2 * psi).real[..., :n1, :n2]
    A2 = np.fft.ifft2(1j * k1 * psi).real[..., :n1, :n2]
    return np.stack([A1, A2])


def divergence2d(A: np.ndarray, dx: float, dy: float) -> np.ndarray:
    A = np.asarray(A)
    return _cdiff(A[0], -2, dx) + _cdiff(A[1], -1, dy)


# -- admissibility -------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    w2inf_norm_A: tuple[float, float]
    linf_Phi: tuple[float, float]
    sobolev_norms: dict
    passes_R1: bool
    passes_R2: bool
    smallness_margin: float
    largest_stable_s: float | None = None

    def summary(self) -> str:
        lines = [
            f"W2inf(A) = {self.w2inf_norm_A[0]:.6g}, {self.w2inf_norm_A[1]:.6g}",
            f"Linf(Phi) = {self.linf_Phi[0]:.6g}, {self.linf_Phi[1]:.6g}",
        ]
        for k, v in self.sobolev_norms.items():
            lines.append(f"{k} = {v[0]:.6g}, {v[1]:.6g}")
        lines.append(f"passes_R1 = {self.passes_R1}")
        lines.append(f"passes_R2 = {self.passes_R2}")
        lines.append(f"smallness_margin = {self.smallness_margin:.6g}")
        if self.largest_stable_s is not None:
            lines.append(f"largest_stable_s = {self.largest_stable_s:.3g}")
        return "\n".join(lines)


def _w2_vector(P: PotentialField) -> float:
    g = P.grid
    return max(w2inf_norm(c, g.dx, g.dy) for c in (P.A0, P.A[0], P.A[1]))


def _slice_norm_max(arrs: Sequence[np.ndarray], s: float, dx: float, dy: float) -> float:
    best = 0.0
    for k in range(arrs[0].shape[0]):
        tot = sum(sobolev_norm_slice(a[k], s, dx, dy) ** 2 for a in arrs)
        best = max(best, math.sqrt(tot))
    return best


def check_admissible(
    P1: PotentialField, P2: PotentialField, R1: float, R2: float,
    s0: float, s1: float, s2: float, T: float,
) -> AdmissibilityReport:
    """Discrete admissibility of a pair of potentials.

    Norms: W^{2,inf} is the max over derivative orders up to two of the sup
    of each component of (A0, A); Sobolev norms are maxima over axial slices.
    """
    if P1.grid is not P2.grid:
        raise ValidationError("potentials live on different grids")
    if s0 < 2 or s1 < 2 or s2 < 0:
        raise ValidationError(f"need s0, s1 >= 2 and s2 >= 0, got ({s0}, {s1}, {s2})")
    g = P1.grid
    w2 = (_w2_vector(P1), _w2_vector(P2))
    lphi = (float(np.abs(P1.Phi).max()), float(np.abs(P2.Phi).max()))
    sob = {}
    for name, s, get in (
        (f"H^{s0}(A0)", s0, lambda P: [P.A0]),
        (f"H^{s1}(A)", s1, lambda P: [P.A[0], P.A[1]]),
        (f"H^{s2}(Phi)", s2, lambda P: [P.Phi]),
    ):
        sob[name] = tuple(_slice_norm_max(get(P), s, g.dx, g.dy) for P in (P1, P2))
    r1_ok = all(w + p <= R1 for w, p in zip(w2, lphi))
    r2_ok = all(max(v) <= R2 for v in sob.values())
    margin = 2 * math.pi / T - (P1 - P2).linf()
    return AdmissibilityReport(
        w2inf_norm_A=w2, linf_Phi=lphi, sobolev_norms=sob, passes_R1=r1_ok,
        passes_R2=r2_ok, smallness_margin=margin,
    )


def largest_stable_s(P: PotentialField, s_grid: Sequence[float] | None = None,
                     rtol: float = 0.05) -> float:
    """Largest s whose slice norm of (A0, A) changes by < rtol under one lattice halving.

    Only analytic (bump-built) fields can be resampled.
    """
    if P.bumps is None:
        raise ValidationError("largest_stable_s needs an analytic potential")
    g = P.grid
    fine = from_bumps(g.refined(2), P.bumps)
    s_grid = list(s_grid) if s_grid is not None else [0.5 * k for k in range(0, 9)]
    best = None
    for s in s_grid:
        a = _slice_norm_max([P.A0, P.A[0], P.A[1]], s, g.dx, g.dy)
        b = _slice_norm_max([fine.A0, fine.A[0], fine.A[1]], s, fine.grid.dx, fine.grid.dy)
        if b == 0 or abs(a - b) <= rtol * b:
            best = s
        else:
            break
    return float(best) if best is not None else float("nan")
