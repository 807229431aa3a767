"""Experiment orchestration, slope fits and brute-force ray oracles.

An experiment is described by a TOML file::

    [geometry]                  # shape descriptor for build_cross_section
    kind = "rectangle"
    width = 1.0
    height = 1.0

    [grid]
    mode = "slice"              # or "full3d"
    resolution = 64
    T_factor = 1.5              # T = T_factor * diam (or give T directly)
    cfl_factor = 1.0
    # ny_axis, y_extent: full3d only

    [potentials]
    base = [{kind = "Phi", center = [0.1, 0.0], width = 0.3, amplitude = 1.0}]
    perturbation = [{kind = "A0", center = [0.0, 0.05], width = 0.3, amplitude = 0.3}]
    scales = [0.05, 0.1, 0.2, 0.4, 0.8]
    # R1, R2: optional admissibility radii

    [probes]                    # family used for the DN-difference lower bound
    lambdas = [8, 16, 32]
    angles = 4
    radius = 0.12

    [exponents]                 # rationals may be given as strings
    s = [2, 2, 1]
    sbar = ["3/2", "3/2", "1/2"]
    gamma = "1/12"
    beta = "23/6"

    [schedule]
    lambda = 16.0               # or "auto"
    cutoff = 8.0
    angles = 16
    offsets = 15
    phi = true

    [noise]
    level = 0.0
    seed = 0

    [output]
    dir = "out"

Outputs (all CSVs carry a header row):

* ``curve.csv``: scale, dn_norm_lb, noise_floor, lambda, lambda_clipped,
  err_A0, err_curlA, err_Phi, ref_A0, ref_curlA, ref_Phi, rays_without_probe
* ``slopes.csv``: norm, slope, intercept, r2, n_points, predicted, predicted_value
* ``scale_<i>/``: dn_ratios.csv, errors.csv (per slice), rays_vector.bin,
  rays_phi.bin, fields.bin
* ``metadata.json``, ``config.toml`` (verbatim copy), ``log.jsonl``, and
  ``failure.json`` when a stage raises.
"""

from __future__ import annotations

import json
import math
import os
import platform
import shutil
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy
from scipy import integrate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .domain import build_cross_section, diam, make_grid
from .errors import DnlabError, NumericalError, ValidationError
from .io import JsonLog, stable_hash, write_csv, write_fields
from .measurement import NORM_VERSION, add_noise, d32_norm, dn_apply, dn_diff_norm_lb
from .potentials import KINDS, Bump, PotentialField, check_admissible, from_bumps, vector_from_curl
from .probes import RayTable, go_boundary_data, points_per_wavelength

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "StabilityCurve",
    "fit_slope",
    "oracle_radon",
    "oracle_radon_samples",
    "collect_rays",
    "build_pair",
    "beam_probe",
    "run_experiment",
    "write_report",
    "gate_record",
    "gauge_defect",
]


def fit_slope(points) -> tuple[float, float, float]:
    """Least squares of log y on log x: returns (slope, intercept, r^2)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValidationError("fit_slope needs at least 4 (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValidationError("fit_slope needs positive finite coordinates")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValidationError("degenerate fit: all x equal")
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), r2


def oracle_radon(P: PotentialField, kind: str, theta, x, y=None) -> complex:
    """Line integral over s of ``(1,-theta)·(A0, iA)`` or ``Phi`` at ``x - s theta``.

    Plain composite Simpson with step min(dx,dy)/8 over an s-range covering
    the whole lattice; shares nothing with the probe machinery.
    """
    if kind not in ("vector", "phi"):
        raise ValidationError(f"kind must be vector or phi, got {kind!r}")
    g = P.grid
    th = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    cs = g.cross_section
    mid = np.array([0.5 * (cs.x1[0] + cs.x1[-1]), 0.5 * (cs.x2[0] + cs.x2[-1])])
    reach = math.hypot(cs.x1[-1] - cs.x1[0], cs.x2[-1] - cs.x2[0]) + float(np.linalg.norm(x - mid))
    h = min(g.dx, g.dy) / 8
    n = 2 * int(math.ceil(reach / h)) + 1
    s = np.linspace(-reach, reach, n)
    pts = x[None, :] - s[:, None] * th[None, :]
    a0, a1, a2, ph = P.evaluate(pts, y)
    if kind == "phi":
        vals = ph.astype(complex)
    else:
        vals = a0 - 1j * (th[0] * a1 + th[1] * a2)
    return complex(integrate.simpson(vals.real, x=s) + 1j * integrate.simpson(vals.imag, x=s))


def _angles(n: int) -> np.ndarray:
    a = 2 * np.pi * np.arange(n) / n
    th = np.stack([np.cos(a), np.sin(a)], axis=1)
    th[np.abs(th) < 1e-15] = 0.0
    return th / np.linalg.norm(th, axis=1, keepdims=True)


def _offsets(grid, n: int) -> np.ndarray:
    half = 0.5 * diam(grid.cross_section)
    return np.linspace(-half, half, n)


def oracle_radon_samples(P1: PotentialField, P2: PotentialField, kind: str, n_angles: int = 16,
                         n_offsets: int = 15, slices=None):
    """RadonSamples of ``P2 - P1`` by direct quadrature (no PDE)."""
    from .reconstruct import RadonSamples, _center, _perp

    g = P1.grid
    D = P2 - P1
    thetas = _angles(n_angles)
    offs = _offsets(g, n_offsets)
    slices = list(range(g.shape[0])) if slices is None else list(slices)
    ys = g.axial[slices]
    c = _center(g)
    vals = np.zeros((thetas.shape[0], offs.size, len(slices)), dtype=complex)
    for i, th in enumerate(thetas):
        for j, rho in enumerate(offs):
            for k, y in enumerate(ys):
                yk = None if g.mode == "slice" else y
                vals[i, j, k] = oracle_radon(D, kind, th, c + rho * _perp(th), yk)
    return RadonSamples(thetas, offs, ys, vals, kind=kind, meta={"source": "oracle"})


# ---------------------------------------------------------------------------
# configuration


class ConfigError(ValidationError):
    """Invalid experiment configuration; the message names the offending key."""


_MISSING = object()


def _at(d: dict, path: str, default=_MISSING):
    cur = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if default is _MISSING:
                raise ConfigError(f"config error at {path}: missing")
            return default
        cur = cur[part]
    return cur


def _num(d, path, default=_MISSING, *, positive=False, integer=False, lo=None):
    v = _at(d, path, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config error at {path}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"config error at {path}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"config error at {path}: must be positive, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"config error at {path}: must be >= {lo}, got {v!r}")
    return int(v) if integer else float(v)


def _rational(v, path) -> Fraction:
    try:
        if isinstance(v, bool):
            raise TypeError
        if isinstance(v, float):
            return Fraction(str(v))
        return Fraction(v)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(f"config error at {path}: not a rational number: {v!r}") from None


def _bumps(d, path, dim) -> tuple[Bump, ...]:
    raw = _at(d, path, [])
    if not isinstance(raw, list):
        raise ConfigError(f"config error at {path}: expected an array of tables")
    out = []
    for i, b in enumerate(raw):
        loc = f"{path}[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(f"config error at {loc}: expected a table")
        unknown = set(b) - {"kind", "center", "width", "amplitude", "power"}
        if unknown:
            raise ConfigError(f"config error at {loc}: unknown keys {sorted(unknown)}")
        kind = b.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"config error at {loc}.kind: expected one of {KINDS}, got {kind!r}")
        c = b.get("center")
        if not (isinstance(c, list) and len(c) == dim and all(isinstance(v, (int, float)) for v in c)):
            raise ConfigError(f"config error at {loc}.center: expected {dim} numbers")
        w = _num(b, "width", positive=True)
        a = b.get("amplitude")
        if kind == "A":
            if not (isinstance(a, list) and len(a) == 2):
                raise ConfigError(f"config error at {loc}.amplitude: kind A needs two components")
            amp = (float(a[0]), float(a[1]))
        else:
            if isinstance(a, bool) or not isinstance(a, (int, float)):
                raise ConfigError(f"config error at {loc}.amplitude: expected a number")
            amp = float(a)
        p = _num(b, "power", 4 if kind == "A_rot" else 3, integer=True, lo=3)
        out.append(Bump(kind, tuple(float(v) for v in c), w, amp, p))
    return tuple(out)


_TABLES = {
    "geometry": None,
    "grid": {"mode", "resolution", "T", "T_factor", "cfl_factor", "ny_axis", "y_extent"},
    "potentials": {"base", "perturbation", "scales", "R1", "R2"},
    "probes": {"lambdas", "angles", "radius"},
    "exponents": {"s", "sbar", "gamma", "beta", "delta", "kappa"},
    "schedule": {"lambda", "lambda_min", "lambda_max", "min_ppw", "cutoff", "cutoff_phi",
                 "angles", "offsets", "phi", "slices", "radius"},
    "noise": {"level", "seed"},
    "output": {"dir"},
    "identity": {"lambda", "half_length", "beam_width", "taper", "theta"},
}

DEFAULT_EXPONENTS = {"s": [2, 2, 1], "sbar": ["3/2", "3/2", "1/2"], "gamma": "1/12", "beta": "23/6"}


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: dict
    mode: str
    resolution: int
    T: float | None
    T_factor: float
    cfl_factor: float
    ny_axis: int | None
    y_extent: float | None
    base: tuple[Bump, ...]
    perturbation: tuple[Bump, ...]
    scales: tuple[float, ...]
    R1: float | None
    R2: float | None
    probe_lambdas: tuple[float, ...]
    probe_angles: int
    probe_radius: float
    exponents: dict
    lam: float | str
    lam_min: float
    lam_max: float | None
    min_ppw: float
    cutoff: float
    cutoff_phi: float | None
    n_angles: int
    n_offsets: int
    phi: bool
    slices: tuple[int, ...] | None
    noise: float
    seed: int
    out: str
    threads: int = 1
    identity: dict = field(default_factory=dict)
    source: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config not found: {p}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config error in {p}: {e}") from None
        return cls.from_dict(raw, source=str(p))

    @classmethod
    def from_dict(cls, raw: dict, source: str | None = None) -> "ExperimentConfig":
        for k, v in raw.items():
            if k not in _TABLES:
                raise ConfigError(f"config error at {k}: unknown table")
            if not isinstance(v, dict):
                raise ConfigError(f"config error at {k}: expected a table")
            allowed = _TABLES[k]
            if allowed is not None:
                extra = set(v) - allowed
                if extra:
                    raise ConfigError(f"config error at {k}.{sorted(extra)[0]}: unknown key")
        geo = dict(_at(raw, "geometry", {"kind": "rectangle", "width": 1.0, "height": 1.0}))
        mode = _at(raw, "grid.mode", "slice")
        if mode not in ("slice", "full3d"):
            raise ConfigError(f"config error at grid.mode: expected slice or full3d, got {mode!r}")
        dim = 2 if mode == "slice" else 3
        scales = _at(raw, "potentials.scales", [0.05, 0.1, 0.2, 0.4, 0.8])
        if not (isinstance(scales, list) and scales):
            raise ConfigError("config error at potentials.scales: expected a non-empty array")
        for i, s in enumerate(scales):
            if isinstance(s, bool) or not isinstance(s, (int, float)) or s < 0:
                raise ConfigError(f"config error at potentials.scales[{i}]: expected a number >= 0")
        ex_raw = dict(DEFAULT_EXPONENTS, **_at(raw, "exponents", {}))
        ex = {}
        for key, n in (("s", 3), ("sbar", 3)):
            v = ex_raw[key]
            if not (isinstance(v, list) and len(v) == n):
                raise ConfigError(f"config error at exponents.{key}: expected {n} values")
            ex[key] = [_rational(x, f"exponents.{key}[{i}]") for i, x in enumerate(v)]
        for key in ("gamma", "beta", "delta", "kappa"):
            if key in ex_raw:
                ex[key] = _rational(ex_raw[key], f"exponents.{key}")
        lam = _at(raw, "schedule.lambda", 16.0)
        if lam != "auto":
            lam = _num(raw, "schedule.lambda", 16.0, lo=1.0)
        lams = _at(raw, "probes.lambdas", [8, 16, 32])
        if not (isinstance(lams, list) and lams and all(isinstance(v, (int, float)) and v >= 1 for v in lams)):
            raise ConfigError("config error at probes.lambdas: expected numbers >= 1")
        phi = _at(raw, "schedule.phi", True)
        if not isinstance(phi, bool):
            raise ConfigError("config error at schedule.phi: expected true or false")
        slices = _at(raw, "schedule.slices", None)
        if slices is not None and not (isinstance(slices, list) and all(isinstance(v, int) for v in slices)):
            raise ConfigError("config error at schedule.slices: expected an array of axial indices")
        out = _at(raw, "output.dir", "out")
        if not isinstance(out, str):
            raise ConfigError("config error at output.dir: expected a string")
        return cls(
            geometry=geo,
            mode=mode,
            resolution=_num(raw, "grid.resolution", 64 if mode == "slice" else 32, integer=True, lo=8),
            T=_num(raw, "grid.T", None, positive=True),
            T_factor=_num(raw, "grid.T_factor", 1.5, positive=True),
            cfl_factor=_num(raw, "grid.cfl_factor", 1.0, positive=True),
            ny_axis=_num(raw, "grid.ny_axis", None if mode == "slice" else 96, integer=True, lo=5),
            y_extent=_num(raw, "grid.y_extent", None, positive=True),
            base=_bumps(raw, "potentials.base", dim),
            perturbation=_bumps(raw, "potentials.perturbation", dim),
            scales=tuple(float(s) for s in scales),
            R1=_num(raw, "potentials.R1", None, positive=True),
            R2=_num(raw, "potentials.R2", None, positive=True),
            probe_lambdas=tuple(float(v) for v in lams),
            probe_angles=_num(raw, "probes.angles", 4, integer=True, lo=1),
            probe_radius=_num(raw, "probes.radius", 0.12, positive=True),
            exponents=ex,
            lam=lam,
            lam_min=_num(raw, "schedule.lambda_min", 4.0, lo=1.0),
            lam_max=_num(raw, "schedule.lambda_max", None, lo=1.0),
            min_ppw=_num(raw, "schedule.min_ppw", 6.0, positive=True),
            cutoff=_num(raw, "schedule.cutoff", 8.0, positive=True),
            cutoff_phi=_num(raw, "schedule.cutoff_phi", None, positive=True),
            n_angles=_num(raw, "schedule.angles", 16, integer=True, lo=2),
            n_offsets=_num(raw, "schedule.offsets", 15, integer=True, lo=3),
            phi=phi,
            slices=tuple(slices) if slices is not None else None,
            noise=_num(raw, "noise.level", 0.0, lo=0.0),
            seed=_num(raw, "noise.seed", 0, integer=True, lo=0),
            out=out,
            identity=dict(_at(raw, "identity", {})),
            source=source,
            raw=raw,
        )

    def override(self, *, out=None, seed=None, mode=None, threads=None) -> "ExperimentConfig":
        raw = json.loads(json.dumps(self.raw))
        kw = {}
        if out is not None:
            kw["out"] = str(out)
            raw.setdefault("output", {})["dir"] = str(out)
        if seed is not None:
            kw["seed"] = int(seed)
            raw.setdefault("noise", {})["seed"] = int(seed)
        if mode is not None and mode != self.mode:
            raw.setdefault("grid", {})["mode"] = mode
            return replace(ExperimentConfig.from_dict(raw, self.source),
                           threads=threads or self.threads, **kw)
        if threads is not None:
            kw["threads"] = int(threads)
        return replace(self, raw=raw, **kw)

    @property
    def hash(self) -> str:
        """Hash of everything that can change a number (the output dir cannot)."""
        raw = json.loads(json.dumps(self.raw, default=str))
        raw.pop("output", None)
        return stable_hash(raw)

    def grid(self):
        cs = build_cross_section(self.geometry, self.resolution)
        T = self.T if self.T is not None else self.T_factor * diam(cs)
        return make_grid(cs, T, mode=self.mode, y_extent=self.y_extent, ny_axis=self.ny_axis,
                         cfl_factor=self.cfl_factor)

    def stability_exponents(self):
        from .reconstruct import compute_exponents

        e = self.exponents
        return compute_exponents(*e["s"], *e["sbar"], e["gamma"], e["beta"],
                                 e.get("delta"), e.get("kappa"))


def build_pair(cfg: ExperimentConfig, grid, scale: float) -> tuple[PotentialField, PotentialField]:
    """``(P1, P2)`` with ``P2 = P1 + scale * perturbation``."""
    P1 = from_bumps(grid, cfg.base)
    P2 = from_bumps(grid, tuple(cfg.base) + tuple(b.scaled(scale) for b in cfg.perturbation))
    return P1, P2


def beam_probe(grid, theta, lam: float, *, half_length: float = 0.4, width: float = 0.7,
               taper: float = 0.4, sign: str = "plus"):
    """Beam-envelope probe that starts just outside the cross-section on the +theta side."""
    from .probes import ProbeSpec
    from .reconstruct import _center

    th = np.asarray(theta, dtype=float)
    c0 = _center(grid)
    reach = float(np.max((grid.cross_section.bnd_pos - c0) @ th))
    off = reach + half_length + 2 * max(grid.dx, grid.dy)
    c = c0 + off * th
    return ProbeSpec(tuple(float(v) for v in th), float(lam), sign,
                     phi_center=tuple(float(v) for v in c), phi_width=half_length,
                     envelope="beam", beam_width=width, beam_taper=taper)


# ---------------------------------------------------------------------------
# stability curve


@dataclass
class StabilityCurve:
    """Errors against the DN-difference lower bound, one point per perturbation scale."""

    points: list  # (dn_norm_lb, {norm: error})
    slopes: dict  # norm -> (slope, intercept, r2, n) or None
    predicted: dict  # norm -> (name, value)
    caveat: str = ("dn_norm_lb is a finite-family lower bound of the operator norm; slopes "
                   "are compared with the predicted exponents, not tested against them")

    @classmethod
    def build(cls, points, predicted) -> "StabilityCurve":
        pts = sorted(points, key=lambda p: p[0])
        norms = sorted({k for _, e in pts for k in e})
        slopes = {}
        for n in norms:
            xy = [(x, e[n]) for x, e in pts if n in e and x > 0 and e[n] > 0]
            if len(xy) >= 4 and np.ptp([x for x, _ in xy]) > 0:
                s, b, r2 = fit_slope(xy)
                slopes[n] = (s, b, r2, len(xy))
            else:
                slopes[n] = None
        return cls(pts, slopes, dict(predicted))

    def monotone(self, norm: str) -> bool:
        e = [p[1][norm] for p in self.points if norm in p[1]]
        return all(b >= a for a, b in zip(e, e[1:]))

    def to_rows(self):
        for n, v in self.slopes.items():
            name, val = self.predicted.get(n, ("", float("nan")))
            if v is None:
                yield (n, "", "", "", 0, name, val)
            else:
                yield (n, v[0], v[1], v[2], v[3], name, val)


# ---------------------------------------------------------------------------
# ray collection


def _probe_point(grid, th, rho, support, alpha):
    from .reconstruct import ray_point

    return ray_point(grid, th, rho, support, alpha)


def collect_rays(data, thetas, offsets, slices, lam: float, width_exp: float, kind: str, *,
                 radius: float = 0.12, alpha: float | None = None, vector_model=None,
                 threads: int = 1, key_prefix: tuple[int, ...] = ()):
    """RadonSamples from DN data, one probe pair per (direction, offset, slice).

    Lines that miss every admissible probe point (they pass outside the
    cross-section or the ring is too thin there) get the value 0; their count
    is stored in ``meta["no_probe"]``.
    """
    from .reconstruct import (RadonSamples, default_alpha, ray_from_exponential,
                              recover_exponential_ray, recover_phi_ray)

    g = data.grid
    alpha = default_alpha(g) if alpha is None else alpha
    eps = lam ** (-width_exp)
    support = radius * eps
    M = g.T * (data.P2 - data.P1).linf()
    thetas = np.asarray(thetas, dtype=float)
    ys = g.axial[list(slices)]
    jobs = []
    for i, th in enumerate(thetas):
        for j, rho in enumerate(offsets):
            x0 = _probe_point(g, th, rho, support, alpha)
            for k, y in enumerate(ys):
                jobs.append((i, j, k, x0, float(y)))
    tables = {}
    if kind == "vector":
        for th in thetas:
            tables[tuple(float(v) for v in th)] = (RayTable(data.P2, th, -1), RayTable(data.P1, th, +1))

    def one(job):
        i, j, k, x0, y = job
        if x0 is None:
            return 0j
        key = tuple(key_prefix) + (i, j, k)
        if kind == "vector":
            v = recover_exponential_ray(data, thetas[i], x0, y, lam, width_exp, radius=radius,
                                        alpha=alpha, tables=tables, key=key)
            return ray_from_exponential(v, g.T, M)
        return recover_phi_ray(data, thetas[i], x0, y, lam, width_exp, vector_model=vector_model,
                               radius=radius, alpha=alpha, key=key)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res = list(pool.map(one, jobs))
    else:
        res = [one(j) for j in jobs]
    vals = np.zeros((thetas.shape[0], len(offsets), len(ys)), dtype=complex)
    for (i, j, k, _, _), v in zip(jobs, res):
        vals[i, j, k] = v
    miss = sum(1 for j in jobs if j[3] is None)
    return RadonSamples(thetas, np.asarray(offsets, float), ys, vals, kind=kind, lam=lam,
                        gamma=width_exp, meta={"no_probe": miss, "alpha": alpha, "M": M})


def vector_model_from(P1: PotentialField, rep, slices) -> PotentialField:
    """P1 plus the reconstructed (A0, A) difference, A taken divergence free."""
    g = P1.grid
    A0 = P1.A0.copy()
    A = P1.A.copy()
    for loc, k in enumerate(slices):
        A0[k] += rep.A0_21[loc].real
        A[:, k] += vector_from_curl(rep.curlA_21[loc].real, g.dx, g.dy)
    return PotentialField(grid=g, A0=A0, A=A, Phi=P1.Phi.copy(), bumps=None)


def gauge_defect(P: PotentialField, psi: Bump, spec) -> float:
    """Relative change of ``Λ f`` under ``A -> A + grad psi`` with psi supported inside.

    The continuum DN map does not see such a gauge change; the returned number
    measures how far the discrete map is from that.  Nothing is asserted.
    """
    from .potentials import bump_derivatives

    g = P.grid
    cs = g.cross_section
    X1, X2 = cs.node_positions()
    pts = np.stack([X1, X2], axis=-1)
    if -float(cs.distance(np.asarray(psi.center[:2]))) <= psi.width:
        raise ValidationError("gauge bump must lie inside the cross-section")
    A = P.A.copy()
    for k, y in enumerate(g.axial):
        _, grad, _ = bump_derivatives(pts, psi, y if len(psi.center) == 3 else None)
        A[:, k] += float(psi.amplitude) * grad
    Pg = PotentialField(grid=g, A0=P.A0, A=A, Phi=P.Phi, support_radius_x=P.support_radius_x,
                        support_radius_y=P.support_radius_y, bumps=None)
    f = go_boundary_data(spec, P)
    d0 = dn_apply(P, f)
    d1 = dn_apply(Pg, f)
    ref = d0.l2_norm()
    return float((d1 - d0).l2_norm() / ref) if ref > 0 else 0.0


# ---------------------------------------------------------------------------
# orchestration


def _dn_lower_bound(cfg, P1, P2, grid, ex, alpha, scale_index):
    """dn_diff_norm_lb over the probe family, with measurement noise on Λ2 f.

    Returns ``(lower bound, noise floor, csv rows, warning messages)``; the
    floor is the same ratio computed for the noise alone.
    """
    from .reconstruct import _probe_pair, ray_point

    gam = float(ex.gamma)
    probes, data, floors = [], {}, []
    for a, th in enumerate(_angles(cfg.probe_angles)):
        for b, lam in enumerate(cfg.probe_lambdas):
            eps = lam ** (-gam)
            x0 = ray_point(grid, th, 0.0, cfg.probe_radius * eps, alpha)
            if x0 is None:
                raise ValidationError(f"no admissible probe point for direction {th} at lambda={lam:g}")
            plus, _ = _probe_pair(grid, th, x0, 0.0, lam, eps, cfg.probe_radius, alpha)
            f = go_boundary_data(plus, P2)
            g1, g2 = dn_apply(P1, f), dn_apply(P2, f)
            floor = 0.0
            if cfg.noise > 0:
                ss = np.random.SeedSequence(cfg.seed, spawn_key=(scale_index, 1_000_000 + a, b))
                noisy = add_noise(g2, cfg.noise, seed=int(ss.generate_state(1)[0]))
                floor = (noisy - g2).l2_norm() / d32_norm(f)
                g2 = noisy
            probes.append(plus)
            data[plus] = (g1, g2)
            floors.append(floor)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = dn_diff_norm_lb(P1, P2, probes, data=data)
    notes = sorted({str(w.message) for w in caught})
    rows = [(n, p.theta[0], p.theta[1], p.lam, float(r))
            for n, (p, r) in enumerate(zip(probes, est.per_probe_ratio))]
    return est.norm_lb, max(floors), rows, notes


def gate_record(ex, dn: float) -> dict:
    """Which side of the small-data gates a measured lower bound falls on.

    Both gates are stated for the true operator norm; a lower bound can only
    pass them optimistically, which the record says.
    """
    from .reconstruct import linfty_bounds

    lb = linfty_bounds(ex, dn)
    thr = ex.lambda0 ** (-1.0 / float(ex.rho))
    below_chi = dn == 0 or math.log(dn) <= ex.log_chi
    return {"regime": lb.regime, "lambda0_threshold": thr, "exponent": lb.exponent,
            "linf_rhs": lb.rhs, "log_chi": ex.log_chi, "below_chi": bool(below_chi),
            "optimistic": True}


def _lambda_for(cfg, grid, ex, dn):
    """Probe frequency: fixed, or ``dn**(-rho)`` clipped to the resolvable window."""
    lam_res = 2 * math.pi / (cfg.min_ppw * max(grid.dx, grid.dy))
    lam_max = min(cfg.lam_max or lam_res, lam_res)
    if cfg.lam != "auto":
        if cfg.lam > lam_res * (1 + 1e-12):
            raise ValidationError(
                f"schedule.lambda = {cfg.lam:g} under-resolved: at most {lam_res:.4g} "
                f"for {cfg.min_ppw:g} points per wavelength"
            )
        return float(cfg.lam), False
    raw = math.inf if dn <= 0 else dn ** (-float(ex.rho))
    lam = min(max(raw, cfg.lam_min), lam_max)
    return float(lam), lam != raw


def _versions() -> dict:
    from .kernels import available_backends

    return {"dnlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernels": available_backends(),
            "norm": NORM_VERSION}


def _validate(cfg: ExperimentConfig):
    """Every precondition that can be checked before the first solve."""
    if not cfg.perturbation:
        raise ConfigError("config error at potentials.perturbation: empty, nothing to recover")
    grid = cfg.grid()
    ex = cfg.stability_exponents()
    from .reconstruct import _check_cutoff, default_alpha

    alpha = default_alpha(grid)
    if cfg.slices is not None:
        if grid.mode == "slice" and list(cfg.slices) != [0]:
            raise ConfigError("config error at schedule.slices: slice mode has one slice (0)")
        bad = [k for k in cfg.slices if not 0 < k < grid.ny_axis - 1] if grid.mode == "full3d" else []
        if bad:
            raise ConfigError(f"config error at schedule.slices: indices {bad} outside the interior")
    slices = list(cfg.slices) if cfg.slices is not None else list(range(grid.shape[0]))
    if grid.mode == "full3d":
        slices = [k for k in slices if 0 < k < grid.ny_axis - 1]
    spacing = float(np.diff(_offsets(grid, cfg.n_offsets))[0])
    for name, r in (("cutoff", cfg.cutoff), ("cutoff_phi", cfg.cutoff_phi)):
        if r is None:
            continue
        try:
            _check_cutoff(grid, r)
        except ValidationError as e:
            raise ConfigError(f"config error at schedule.{name}: {e}") from None
        if r * spacing > math.pi:
            raise ConfigError(
                f"config error at schedule.{name}: r = {r:g} above the offset Nyquist limit "
                f"{math.pi / spacing:.4g}; raise schedule.offsets"
            )
    reports = []
    for i, s in enumerate(cfg.scales):
        try:
            P1, P2 = build_pair(cfg, grid, s)
        except ValidationError as e:
            raise ConfigError(f"config error at potentials (scale {s:g}): {e}") from None
        rep = check_admissible(P1, P2, cfg.R1 or math.inf, cfg.R2 or math.inf,
                               float(ex.s0), float(ex.s1), float(ex.s2), grid.T)
        if rep.smallness_margin <= 0:
            raise ValidationError(f"scale {s:g}: smallness violated (margin {rep.smallness_margin:.4g})")
        if cfg.R1 is not None and not rep.passes_R1:
            raise ValidationError(f"scale {s:g}: W2inf + Linf bound exceeds R1 = {cfg.R1:g}")
        if cfg.R2 is not None and not rep.passes_R2:
            raise ValidationError(f"scale {s:g}: Sobolev bound exceeds R2 = {cfg.R2:g}")
        reports.append(rep)
    gam = float(ex.gamma)
    for th in _angles(cfg.probe_angles):
        for lam in cfg.probe_lambdas:
            from .reconstruct import ray_point

            if ray_point(grid, th, 0.0, cfg.probe_radius * lam ** (-gam), alpha) is None:
                raise ValidationError(f"no admissible probe point for direction {th} at lambda={lam:g}")
    if cfg.lam != "auto":
        _lambda_for(cfg, grid, ex, 1.0)
    return grid, ex, alpha, slices, reports


def write_report(rep, out, *, meta: dict | None = None, rays=()) -> Path:
    """ReconstructionReport as a directory: errors.csv, fields.bin, rays_*.bin, metadata.json."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    per = rep.meta.get("per_slice", {})
    slices = rep.meta.get("slices", list(range(rep.A0_21.shape[0])))
    names = sorted(per)
    write_csv(out / "errors.csv", ["slice"] + [f"err_{n}" for n in names],
              [(k,) + tuple(float(per[n][loc]) for n in names) for loc, k in enumerate(slices)])
    fields = {"A0_21": rep.A0_21, "curlA_21": rep.curlA_21}
    if rep.Phi_21 is not None:
        fields["Phi_21"] = rep.Phi_21
    m = dict(meta or {})
    write_fields(out / "fields.bin", fields, (1.0, 1.0, 1.0), dict(m, slices=slices))
    for rs in rays:
        write_fields(out / f"rays_{rs.kind}.bin", {"values": rs.values}, (1.0, rs.spacing, 1.0),
                     dict(m, thetas=rs.thetas.tolist(), offsets=rs.offsets.tolist(),
                          ys=rs.ys.tolist(), lam=rs.lam, width_exp=rs.gamma,
                          no_probe=rs.meta.get("no_probe")))
    info = dict(m, cutoff=rep.cutoff, cutoff_phi=rep.cutoff_phi, errors=rep.errors,
                references=rep.references, dn_norm_lb=rep.dn_norm_lb, lam_schedule=rep.lam_schedule)
    (out / "metadata.json").write_text(json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")
    return out


def reconstruct_scale(cfg, grid, ex, alpha, slices, scale_index, P1, P2, lam, *, log=None):
    """Rays from DN data for one pair, then low-pass inversion."""
    from .reconstruct import DnData, invert_fields

    data = DnData(P1, P2, noise=cfg.noise, seed=cfg.seed)
    thetas = _angles(cfg.n_angles)
    offs = _offsets(grid, cfg.n_offsets)
    radius = cfg.probe_radius
    vr = collect_rays(data, thetas, offs, slices, lam, float(ex.gamma), "vector", radius=radius,
                      alpha=alpha, threads=cfg.threads, key_prefix=(scale_index, 0))
    if log:
        log("rays", scale_index=scale_index, kind="vector", no_probe=vr.meta["no_probe"])
    rep = invert_fields(vr, grid, cfg.cutoff, exponents=ex, truth=(P1, P2), slices=slices)
    rays = [vr]
    if cfg.phi:
        model = vector_model_from(P1, rep, slices)
        pr = collect_rays(data, thetas, offs, slices, lam, float(ex.delta), "phi", radius=radius,
                          alpha=alpha, vector_model=model, threads=cfg.threads,
                          key_prefix=(scale_index, 1))
        if log:
            log("rays", scale_index=scale_index, kind="phi", no_probe=pr.meta["no_probe"])
        rep = invert_fields(vr, grid, cfg.cutoff, phi_rays=pr, r_phi=cfg.cutoff_phi or cfg.cutoff,
                            exponents=ex, truth=(P1, P2), slices=slices)
        rays.append(pr)
    return rep, rays


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Validate, synthesize DN data per scale, reconstruct, fit; returns the output directory."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    log = JsonLog(out / "log.jsonl")
    stage = "validate"
    try:
        grid, ex, alpha, slices, adm = _validate(cfg)
        log("validated", config_hash=cfg.hash, grid=list(grid.shape), nt=grid.nt, T=grid.T,
            alpha=alpha, slices=slices)
        if cfg.source:
            shutil.copyfile(cfg.source, out / "config.toml")
        rows, points, sched, gates = [], [], [], []
        for i, s in enumerate(cfg.scales):
            stage = f"scale {i}"
            P1, P2 = build_pair(cfg, grid, s)
            dn, floor, ratio_rows, notes = _dn_lower_bound(cfg, P1, P2, grid, ex, alpha, i)
            lam, clipped = _lambda_for(cfg, grid, ex, dn)
            gate = gate_record(ex, dn)
            gates.append(gate)
            log("dn_norm_lb", scale_index=i, scale=s, dn_norm_lb=dn, noise_floor=floor, lam=lam,
                clipped=clipped, gate=gate)
            for msg in notes:
                log("warning", scale_index=i, message=msg)
            if points_per_wavelength(lam, grid) < cfg.min_ppw * (1 - 1e-12):
                raise ValidationError(f"lambda = {lam:g} under-resolved on this grid")
            rep, rays = reconstruct_scale(cfg, grid, ex, alpha, slices, i, P1, P2, lam, log=log)
            rep.dn_norm_lb = dn
            rep.lam_schedule = {"lambda": lam, "clipped": clipped, "width_vector": lam ** -float(ex.gamma),
                                "width_phi": lam ** -float(ex.delta)}
            d = out / f"scale_{i}"
            d.mkdir(exist_ok=True)
            write_csv(d / "dn_ratios.csv", ["probe", "theta1", "theta2", "lambda", "ratio"], ratio_rows)
            write_report(rep, d, meta={"scale": s, "seed": cfg.seed, "config_hash": cfg.hash},
                         rays=rays)
            e = rep.errors
            no_probe = sum(r.meta["no_probe"] for r in rays)
            rows.append((s, dn, floor, lam, int(clipped), e["A0"], e["curlA"], e.get("Phi", float("nan")),
                         rep.references["A0"], rep.references["curlA"],
                         rep.references.get("Phi", float("nan")), no_probe))
            points.append((dn, {k: v for k, v in e.items()}))
            sched.append(rep.lam_schedule)
            log("reconstructed", scale_index=i, errors=e)
        stage = "fit"
        small = float(ex.frak_b1 * ex.mu / 2)
        pred = {"A0": ("mu", float(ex.mu)), "curlA": ("mu", float(ex.mu)),
                "Phi": ("zeta", float(ex.zeta))}
        curve = StabilityCurve.build(points, pred)
        write_csv(out / "curve.csv",
                  ["scale", "dn_norm_lb", "noise_floor", "lambda", "lambda_clipped", "err_A0",
                   "err_curlA", "err_Phi", "ref_A0", "ref_curlA", "ref_Phi", "rays_without_probe"],
                  sorted(rows, key=lambda r: r[1]))
        write_csv(out / "slopes.csv",
                  ["norm", "slope", "intercept", "r2", "n_points", "predicted", "predicted_value"],
                  curve.to_rows())
        meta = {
            "config_hash": cfg.hash,
            "config": cfg.raw,
            "seed": cfg.seed,
            "noise": cfg.noise,
            "versions": _versions(),
            "grid": {"shape": list(grid.shape), "dx": grid.dx, "dy": grid.dy, "dz": grid.dz,
                     "dt": grid.dt, "nt": grid.nt, "T": grid.T, "mode": grid.mode},
            "alpha": alpha,
            "slices": slices,
            "exponents": {n: s for n, s, _ in ex.table()},
            "predicted": {"mu": float(ex.mu), "b1_mu_over_2": small, "zeta": float(ex.zeta),
                          "eta": float(ex.eta)},
            "schedules": sched,
            "gates": gates,
            "cutoff": cfg.cutoff,
            "cutoff_phi": cfg.cutoff_phi or cfg.cutoff,
            "admissibility": [r.summary() for r in adm],
            "caveat": curve.caveat,
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
        log("done", slopes={k: (v[0] if v else None) for k, v in curve.slopes.items()})
        return out
    except DnlabError as e:
        rec = {"stage": stage, "error": type(e).__name__, "message": str(e),
               "exit_code": 3 if isinstance(e, NumericalError) else 2, "config_hash": cfg.hash}
        (out / "failure.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
        log("failed", **rec)
        raise


def load_curve(out) -> StabilityCurve:
    """Rebuild the StabilityCurve from a finished output directory."""
    from .io import read_csv

    out = Path(out)
    head, rows = read_csv(out / "curve.csv")
    col = {h: i for i, h in enumerate(head)}
    meta = json.loads((out / "metadata.json").read_text())
    points = []
    for r in rows:
        e = {"A0": float(r[col["err_A0"]]), "curlA": float(r[col["err_curlA"]])}
        phi = float(r[col["err_Phi"]])
        if not math.isnan(phi):
            e["Phi"] = phi
        points.append((float(r[col["dn_norm_lb"]]), e))
    p = meta["predicted"]
    return StabilityCurve.build(points, {"A0": ("mu", p["mu"]), "curlA": ("mu", p["mu"]),
                                         "Phi": ("zeta", p["zeta"])})


def cpu_threads(n: int | None) -> int:
    if n is None or n <= 0:
        return 1
    return min(int(n), os.cpu_count() or 1)
