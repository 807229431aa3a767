"""Boundary traces on the lateral boundary lattice (∂ω nodes × axial × time)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .domain import WaveguideGrid
from .errors import ValidationError

__all__ = ["BoundaryTrace", "time_weights"]


def time_weights(grid: WaveguideGrid) -> np.ndarray:
    """Trapezoid weights on the time levels 0..nt."""
    w = np.full(grid.nt + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return w


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Complex samples of shape ``(nt + 1, n_axial_boundary, n_boundary_nodes)``.

    ``kind`` is ``dirichlet`` for input data and ``neumann`` for measured
    normal derivatives.
    """

    grid: WaveguideGrid
    samples: np.ndarray
    kind: str = "dirichlet"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid
        want = (g.nt + 1, g.boundary_axial_index().size, g.cross_section.n_boundary)
        if self.samples.shape != want:
            raise ValidationError(f"trace shape {self.samples.shape} does not match lattice {want}")
        if self.kind not in ("dirichlet", "neumann"):
            raise ValidationError(f"unknown trace kind {self.kind!r}")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("trace contains non-finite values")

    @classmethod
    def zeros(cls, grid: WaveguideGrid, kind: str = "dirichlet") -> "BoundaryTrace":
        shp = (grid.nt + 1, grid.boundary_axial_index().size, grid.cross_section.n_boundary)
        return cls(grid, np.zeros(shp, dtype=complex), kind)

    def _check(self, other: "BoundaryTrace") -> None:
        if other.grid is not self.grid:
            raise ValidationError("traces live on different grids")

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return replace(self, samples=self.samples + other.samples)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return replace(self, samples=self.samples - other.samples)

    def __mul__(self, s: complex) -> "BoundaryTrace":
        return replace(self, samples=s * self.samples)

    __rmul__ = __mul__

    def surface_weights(self) -> np.ndarray:
        """Quadrature weights over (time, axial, node)."""
        g = self.grid
        wt = time_weights(g)
        wb = g.cross_section.bnd_weight
        wy = g.axial_weights()[g.boundary_axial_index()]
        return wt[:, None, None] * wy[None, :, None] * wb[None, None, :]

    def inner(self, other: "BoundaryTrace") -> complex:
        """``∫ self * conj(other) dS dt`` by trapezoid quadrature."""
        self._check(other)
        return complex((self.samples * np.conj(other.samples) * self.surface_weights()).sum())

    def l2_norm(self) -> float:
        return float(np.sqrt((np.abs(self.samples) ** 2 * self.surface_weights()).sum()))

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.abs(self.samples) ** 2)))
