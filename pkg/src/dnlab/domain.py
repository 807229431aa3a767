"""Geometry of the truncated waveguide and its lattice discretization.

The cross-section lives on a uniform node lattice.  Nodes strictly inside the
shape are updated by the solver; the ring of outside nodes that touch the
interior through a lattice edge carries Dirichlet data (staircase boundary).
Field arrays use the layout ``(n_axial, n1, n2)`` everywhere, with
``n_axial == 1`` in slice mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import ndimage

from .errors import ValidationError

__all__ = [
    "CrossSection",
    "WaveguideGrid",
    "Region",
    "build_cross_section",
    "diam",
    "omega_alpha_ring",
    "cfl_dt",
    "cfl_dt_from_spacing",
    "make_grid",
]


@dataclass(frozen=True, eq=False)
class CrossSection:
    """Lattice description of the planar cross-section."""

    kind: str
    params: Mapping[str, Any]
    x1: np.ndarray
    x2: np.ndarray
    interior: np.ndarray
    bnd_index: np.ndarray
    bnd_pos: np.ndarray
    bnd_normal: np.ndarray
    bnd_weight: np.ndarray
    _bitmap: np.ndarray | None = field(default=None, repr=False)
    bnd_arc: np.ndarray | None = field(default=None, repr=False)

    @property
    def dx(self) -> float:
        return float(self.x1[1] - self.x1[0])

    @property
    def dy(self) -> float:
        return float(self.x2[1] - self.x2[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x1.size, self.x2.size)

    @property
    def n_boundary(self) -> int:
        return int(self.bnd_index.shape[0])

    @property
    def perimeter(self) -> float:
        return float(self.bnd_weight.sum())

    def node_positions(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Closed-set membership of points with shape (..., 2)."""
        return self.distance(pts) <= 0.0

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance to the shape; zero inside (negative depth for analytic kinds)."""
        pts = np.asarray(pts, dtype=float)
        if self.kind == "disk":
            c = np.asarray(self.params["center"], dtype=float)
            return np.hypot(pts[..., 0] - c[0], pts[..., 1] - c[1]) - self.params["radius"]
        if self.kind == "rectangle":
            u, v = _rect_local(self.params, pts)
            a, b = self.params["width"] / 2.0, self.params["height"] / 2.0
            qu = np.abs(u) - a
            qv = np.abs(v) - b
            outside = np.hypot(np.maximum(qu, 0.0), np.maximum(qv, 0.0))
            inside = np.minimum(np.maximum(qu, qv), 0.0)
            return outside + inside
        return _mask_distance(self, pts)


@dataclass(frozen=True, eq=False)
class WaveguideGrid:
    """Space-time lattice for the truncated waveguide."""

    cross_section: CrossSection
    y_extent: float
    nx: int
    ny_cross: int
    ny_axis: int
    dx: float
    dy: float
    dz: float
    T: float
    dt: float
    nt: int
    mode: str = "slice"

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.ny_axis, self.nx, self.ny_cross)

    @property
    def axial(self) -> np.ndarray:
        if self.mode == "slice":
            return np.zeros(1)
        return np.linspace(-self.y_extent, self.y_extent, self.ny_axis)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    @property
    def cell_volume(self) -> float:
        vol = self.dx * self.dy
        return vol * self.dz if self.mode == "full3d" else vol

    def interior_mask(self) -> np.ndarray:
        """Boolean mask of solver-updated nodes, shape ``self.shape``."""
        m = np.broadcast_to(self.cross_section.interior, self.shape).copy()
        if self.mode == "full3d":
            m[0] = False
            m[-1] = False
        return m

    def axial_weights(self) -> np.ndarray:
        """Quadrature weight per axial index (1 in slice mode)."""
        if self.mode == "slice":
            return np.ones(1)
        w = np.full(self.ny_axis, self.dz)
        w[0] = w[-1] = 0.0
        return w

    def boundary_axial_index(self) -> np.ndarray:
        if self.mode == "slice":
            return np.zeros(1, dtype=int)
        return np.arange(1, self.ny_axis - 1)

    def refined(self, factor: int = 2) -> "WaveguideGrid":
        """Same geometry with every spacing divided by ``factor``."""
        cs = self.cross_section
        spec = dict(cs.params)
        spec["kind"] = cs.kind
        res = int(round(cs.params["resolution"] * factor))
        cs2 = build_cross_section(spec, res)
        ny = None if self.mode == "slice" else (self.ny_axis - 1) * factor + 1
        return make_grid(
            cs2, self.T, mode=self.mode, y_extent=self.y_extent, ny_axis=ny,
            cfl_factor=self.dt / cfl_dt(self),
        )


@dataclass(frozen=True, eq=False)
class Region:
    """Point cloud with quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def area(self) -> float:
        return float(self.weights.sum())


def _rect_local(params: Mapping[str, Any], pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(params.get("center", (0.0, 0.0)), dtype=float)
    ang = float(params.get("angle", 0.0))
    ca, sa = math.cos(ang), math.sin(ang)
    px = pts[..., 0] - c[0]
    py = pts[..., 1] - c[1]
    return ca * px + sa * py, -sa * px + ca * py


def _mask_distance(cs: CrossSection, pts: np.ndarray) -> np.ndarray:
    # distance to the union of bitmap cells, via the nearest-cell lookup on a
    # padded distance transform
    bm = cs._bitmap
    cell = float(cs.params["cell"])
    ox, oy = cs.params["origin"]
    sub = 4
    fine = np.kron(bm, np.ones((sub, sub), dtype=bool))
    pad = 8 * sub
    fine = np.pad(fine, pad)
    hf = cell / sub
    dist = ndimage.distance_transform_edt(~fine) * hf
    fx = (pts[..., 0] - ox) / hf + pad
    fy = (pts[..., 1] - oy) / hf + pad
    ii = np.clip(np.floor(fx).astype(int), 0, fine.shape[0] - 1)
    jj = np.clip(np.floor(fy).astype(int), 0, fine.shape[1] - 1)
    d = dist[ii, jj]
    outside_box = (fx < 0) | (fy < 0) | (fx >= fine.shape[0]) | (fy >= fine.shape[1])
    if np.any(outside_box):
        # far field: distance to the bounding box is a safe lower estimate
        d = np.where(outside_box, np.maximum(d, hf * pad), d)
    inside = fine[ii, jj] & ~outside_box
    return np.where(inside, 0.0, np.maximum(d, 1e-300))


def build_cross_section(spec: Mapping[str, Any], resolution: int) -> CrossSection:
    """Rasterize a shape descriptor.

    ``spec`` is a mapping with ``kind`` in {disk, rectangle, mask}.  Disks take
    ``radius`` and optional ``center``; rectangles take ``width``, ``height`` and
    optional ``center``/``angle``; masks take a boolean ``bitmap``, a ``cell``
    size and an optional ``origin`` (position of cell (0, 0)).  ``resolution``
    is the number of lattice cells across the largest extent of the shape.
    """
    resolution = int(resolution)
    if resolution < 8:
        raise ValidationError(f"resolution must be >= 8, got {resolution}")
    kind = spec.get("kind")
    params: dict[str, Any] = {"resolution": resolution}
    if kind == "disk":
        r = float(spec.get("radius", 0.0))
        if not r > 0:
            raise ValidationError(f"disk radius must be positive, got {r}")
        c = tuple(float(v) for v in spec.get("center", (0.0, 0.0)))
        params.update(radius=r, center=c)
        h = 2.0 * r / resolution
        x1 = c[0] + h * np.arange(-(resolution // 2 + 3), resolution // 2 + 4)
        x2 = c[1] + h * np.arange(-(resolution // 2 + 3), resolution // 2 + 4)
    elif kind == "rectangle":
        w = float(spec.get("width", 0.0))
        ht = float(spec.get("height", 0.0))
        if not (w > 0 and ht > 0):
            raise ValidationError(f"rectangle sides must be positive, got {w} x {ht}")
        c = tuple(float(v) for v in spec.get("center", (0.0, 0.0)))
        ang = float(spec.get("angle", 0.0))
        params.update(width=w, height=ht, center=c, angle=ang)
        if ang == 0.0:
            # sides fall exactly on lattice lines
            h = max(w, ht) / resolution
            n1 = int(round(w / h))
            n2 = int(round(ht / h))
            hx, hy = w / n1, ht / n2
            x1 = c[0] - w / 2 + hx * np.arange(-2, n1 + 3)
            x2 = c[1] - ht / 2 + hy * np.arange(-2, n2 + 3)
        else:
            ext = math.hypot(w, ht)
            h = max(w, ht) / resolution
            m = int(math.ceil(ext / (2 * h))) + 3
            x1 = c[0] + h * np.arange(-m, m + 1)
            x2 = c[1] + h * np.arange(-m, m + 1)
    elif kind == "mask":
        bm = np.asarray(spec["bitmap"], dtype=bool)
        cell = float(spec.get("cell", 0.0))
        if not cell > 0:
            raise ValidationError(f"mask cell size must be positive, got {cell}")
        if bm.ndim != 2 or not bm.any():
            raise ValidationError("mask bitmap must be a non-empty 2-D boolean array")
        _check_mask_topology(bm)
        origin = tuple(float(v) for v in spec.get("origin", (0.0, 0.0)))
        params.update(cell=cell, origin=origin)
        pad = 3
        x1 = origin[0] + cell * (np.arange(bm.shape[0] + 2 * pad) - pad + 0.5)
        x2 = origin[1] + cell * (np.arange(bm.shape[1] + 2 * pad) - pad + 0.5)
        interior = np.pad(bm, pad)
        cs = _assemble(kind, params, x1, x2, interior, bitmap=bm)
        return cs
    else:
        raise ValidationError(f"unknown cross-section kind {kind!r}")

    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    tmp = CrossSection(kind, params, x1, x2, np.zeros(X1.shape, bool),
                       *(np.empty((0, 2)),) * 3, np.empty(0))
    d = tmp.distance(np.stack([X1, X2], axis=-1))
    tol = 1e-9 * h
    interior = d < -tol
    return _assemble(kind, params, x1, x2, interior)


def _check_mask_topology(bm: np.ndarray) -> None:
    four = ndimage.generate_binary_structure(2, 1)
    _, n_in = ndimage.label(bm, structure=four)
    if n_in != 1:
        raise ValidationError(f"mask interior must be connected, found {n_in} components")
    _, n_out = ndimage.label(np.pad(~bm, 1, constant_values=True), structure=np.ones((3, 3), bool))
    if n_out != 1:
        raise ValidationError("mask interior must be simply connected (holes found)")


def _assemble(kind, params, x1, x2, interior, bitmap=None) -> CrossSection:
    nb = np.zeros_like(interior)
    nb[1:, :] |= interior[:-1, :]
    nb[:-1, :] |= interior[1:, :]
    nb[:, 1:] |= interior[:, :-1]
    nb[:, :-1] |= interior[:, 1:]
    bmask = nb & ~interior
    idx = np.argwhere(bmask)
    pos = np.stack([x1[idx[:, 0]], x2[idx[:, 1]]], axis=-1)
    if kind == "mask":
        normal, s, perim = _mask_frame(interior, x1, x2, idx, pos)
    else:
        normal, s, perim = _analytic_frame(kind, params, pos)
    order = np.argsort(s, kind="stable")
    idx, pos, normal, s = idx[order], pos[order], normal[order], s[order]
    ds = np.diff(np.concatenate([s[-1:] - perim, s, s[:1] + perim]))
    weight = 0.5 * (ds[:-1] + ds[1:])
    return CrossSection(
        kind=kind, params=params, x1=x1, x2=x2, interior=interior,
        bnd_index=idx, bnd_pos=pos, bnd_normal=normal, bnd_weight=weight,
        _bitmap=bitmap, bnd_arc=s,
    )


def _analytic_frame(kind, params, pos):
    """Outward normals and counterclockwise arc-length coordinates."""
    if kind == "disk":
        c = np.asarray(params["center"])
        r = params["radius"]
        d = pos - c
        ang = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
        n = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return n, r * ang, 2 * np.pi * r
    a, b = params["width"] / 2.0, params["height"] / 2.0
    ang = float(params.get("angle", 0.0))
    ca, sa = math.cos(ang), math.sin(ang)
    u, v = _rect_local(params, pos)
    qu, qv = np.abs(u) - a, np.abs(v) - b
    nu = np.zeros_like(u)
    nv = np.zeros_like(v)
    out = (qu > 0) | (qv > 0)
    # outside: direction from the nearest boundary point
    pu = np.clip(u, -a, a)
    pv = np.clip(v, -b, b)
    du, dv = u - pu, v - pv
    nrm = np.hypot(du, dv)
    corner = out & (qu > 0) & (qv > 0)
    side_u = ~corner & (qu >= qv)
    side_v = ~corner & (qv > qu)
    nu[corner] = du[corner] / nrm[corner]
    nv[corner] = dv[corner] / nrm[corner]
    tie = np.isclose(qu, qv, rtol=0, atol=1e-12) & ~corner
    nu[side_u] = np.sign(u[side_u])
    nv[side_v] = np.sign(v[side_v])
    nu[tie] = np.sign(u[tie]) / math.sqrt(2)
    nv[tie] = np.sign(v[tie]) / math.sqrt(2)
    # arc length of the nearest boundary point, counterclockwise from (a, -b)
    perim = 4 * (a + b)
    s = np.empty_like(u)
    right = (pu >= a - 1e-12) & (nu > 0)
    top = (pv >= b - 1e-12) & (nv > 0) & ~right
    left = (pu <= -a + 1e-12) & (nu < 0) & ~right & ~top
    bottom = ~(right | top | left)
    s[right] = pv[right] + b
    s[top] = 2 * b + (a - pu[top])
    s[left] = 2 * b + 2 * a + (b - pv[left])
    s[bottom] = 4 * b + 2 * a + (pu[bottom] + a)
    s = np.mod(s, perim)
    n = np.stack([ca * nu - sa * nv, sa * nu + ca * nv], axis=-1)
    return n, s, perim


def _mask_frame(interior, x1, x2, idx, pos):
    sm = ndimage.gaussian_filter(interior.astype(float), sigma=1.5)
    g1, g2 = np.gradient(sm, x1, x2, edge_order=2)
    n = -np.stack([g1[idx[:, 0], idx[:, 1]], g2[idx[:, 0], idx[:, 1]]], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    cen = np.array([X1[interior].mean(), X2[interior].mean()])
    ang = np.mod(np.arctan2(pos[:, 1] - cen[1], pos[:, 0] - cen[0]), 2 * np.pi)
    order = np.argsort(ang, kind="stable")
    # arc length along the circularly smoothed staircase polygon
    p = pos[order]
    k = 5
    ker = np.ones(k) / k
    ps = np.stack([
        np.convolve(np.concatenate([p[-k:, j], p[:, j], p[:k, j]]), ker, "same")[k:-k]
        for j in range(2)
    ], axis=-1)
    seg = np.linalg.norm(np.diff(np.vstack([ps, ps[:1]]), axis=0), axis=-1)
    s_sorted = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    s = np.empty(len(p))
    s[order] = s_sorted
    return n, s, float(seg.sum())


def diam(cs: CrossSection) -> float:
    """Diameter of the shape.

    Exact for disks and rectangles.  Masks use the largest pairwise distance
    between boundary nodes.
    """
    if cs.kind == "disk":
        return 2.0 * float(cs.params["radius"])
    if cs.kind == "rectangle":
        return math.hypot(cs.params["width"], cs.params["height"])
    p = cs.bnd_pos
    if len(p) > 4000:
        # only convex-hull vertices can realize the maximum
        from scipy.spatial import ConvexHull

        p = p[ConvexHull(p).vertices]
    d = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(-1))
    return float(d.max())


def cfl_dt_from_spacing(dx: float, dy: float, dz: float | None = None) -> float:
    s = 1.0 / dx**2 + 1.0 / dy**2
    if dz is not None:
        s += 1.0 / dz**2
    return 0.9 / math.sqrt(s)


def cfl_dt(grid: WaveguideGrid) -> float:
    """Largest admissible leapfrog step (safety factor 0.9, wave speed 1)."""
    if min(grid.dx, grid.dy, grid.dz) <= 0:
        raise ValidationError("grid spacings must be positive")
    dz = grid.dz if grid.mode == "full3d" else None
    return cfl_dt_from_spacing(grid.dx, grid.dy, dz)


def make_grid(
    cs: CrossSection,
    T: float,
    *,
    mode: str = "slice",
    y_extent: float | None = None,
    ny_axis: int | None = None,
    cfl_factor: float = 1.0,
) -> WaveguideGrid:
    """Build a space-time grid with ``nt * dt == T`` and ``dt <= cfl_dt``."""
    if mode not in ("slice", "full3d"):
        raise ValidationError(f"unknown mode {mode!r}")
    d = diam(cs)
    if not T > d:
        raise ValidationError(f"T = {T} must exceed diam = {d:.6g}")
    if not 0 < cfl_factor <= 1.0 + 1e-12:
        raise ValidationError(f"cfl_factor must lie in (0, 1], got {cfl_factor}")
    dx, dy = cs.dx, cs.dy
    if mode == "slice":
        L, nz, dz = 0.0, 1, 1.0
        dtmax = cfl_dt_from_spacing(dx, dy)
    else:
        L = float(y_extent if y_extent is not None else T + 1.0)
        nz = int(ny_axis if ny_axis is not None else 2 * int(round(L / dx)) + 1)
        if nz < 5:
            raise ValidationError("full3d mode needs at least 5 axial nodes")
        dz = 2 * L / (nz - 1)
        dtmax = cfl_dt_from_spacing(dx, dy, dz)
    nt = int(math.ceil(T / (cfl_factor * dtmax) - 1e-9))
    dt = T / nt
    return WaveguideGrid(
        cross_section=cs, y_extent=L, nx=cs.shape[0], ny_cross=cs.shape[1],
        ny_axis=nz, dx=dx, dy=dy, dz=dz, T=float(T), dt=dt, nt=nt, mode=mode,
    )


def omega_alpha_ring(
    cs: CrossSection, alpha: float, T: float, *, spacing: float | None = None
) -> Region:
    """Exterior collar ``{x outside the closed shape : dist(x, shape) < alpha}``.

    ``alpha`` must satisfy ``0 < alpha < min(1, (T - diam) / 3)``.
    """
    d = diam(cs)
    bound = min(1.0, (T - d) / 3.0)
    if not alpha > 0:
        raise ValidationError(f"alpha = {alpha} must be positive")
    if not alpha < bound:
        which = "1" if bound == 1.0 else "(T - diam)/3"
        raise ValidationError(
            f"alpha not strictly below bound: alpha = {alpha} >= {which} = {bound:.6g}"
        )
    h = spacing if spacing is not None else alpha / 40.0
    lo1, hi1 = cs.x1[0] - alpha, cs.x1[-1] + alpha
    lo2, hi2 = cs.x2[0] - alpha, cs.x2[-1] + alpha
    g1 = np.arange(lo1 + h / 2, hi1, h)
    g2 = np.arange(lo2 + h / 2, hi2, h)
    P = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    dist = cs.distance(P)
    keep = (dist > 0) & (dist < alpha)
    if cs.kind == "mask":
        keep &= ~_in_lattice_interior(cs, P)
    pts = P[keep]
    return Region(points=pts, weights=np.full(len(pts), h * h))


def _in_lattice_interior(cs: CrossSection, pts: np.ndarray) -> np.ndarray:
    i = np.rint((pts[:, 0] - cs.x1[0]) / cs.dx).astype(int)
    j = np.rint((pts[:, 1] - cs.x2[0]) / cs.dy).astype(int)
    ok = (i >= 0) & (j >= 0) & (i < cs.x1.size) & (j < cs.x2.size)
    out = np.zeros(len(pts), bool)
    out[ok] = cs.interior[i[ok], j[ok]]
    return out
