"""Inversion pipeline: ray integrals from DN data, Fourier slices, low-pass field recovery.

Ray convention: for a unit direction ``theta`` and offset ``rho`` the line is
``c + rho theta_perp - s theta`` (``c`` the cross-section center,
``theta_perp = (-theta_2, theta_1)``), and the stored value is the integral
over s of ``(1, -theta)·(A0, iA) = A0 - i theta·A`` (vector kind) or of Phi.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .domain import WaveguideGrid, diam
from .errors import NumericalError, ValidationError
from .measurement import add_noise, dn_apply
from .potentials import PotentialField, curl2d
from .probes import ProbeSpec, RayTable, go_boundary_data, mollifier_pair, solve_probe
from .solver import build_stencil, solve_ibvp
from .traces import BoundaryTrace, time_weights

__all__ = [
    "IdentityCheck",
    "DnData",
    "RadonSamples",
    "StabilityExponents",
    "ReconstructionReport",
    "integral_identity_check",
    "ray_point",
    "default_alpha",
    "recover_exponential_ray",
    "ray_from_exponential",
    "recover_phi_ray",
    "fourier_slice_vector",
    "fourier_slice_scalar",
    "assemble_curl_hat",
    "invert_fields",
    "compute_exponents",
    "linfty_bounds",
]


def _center(grid: WaveguideGrid) -> np.ndarray:
    cs = grid.cross_section
    if cs.kind != "mask":
        return np.asarray(cs.params.get("center", (0.0, 0.0)), dtype=float)
    return np.array([0.5 * (cs.x1[0] + cs.x1[-1]), 0.5 * (cs.x2[0] + cs.x2[-1])])


def _perp(theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    return np.array([-th[1], th[0]])


# ---------------------------------------------------------------------------
# integral identity


@dataclass
class IdentityCheck:
    lhs: complex
    rhs: complex
    gap: float
    floor: float


def _difference_coefficients(P1: PotentialField, P2: PotentialField):
    A0 = P2.A0 - P1.A0
    A = P2.A - P1.A
    phit = -1j * (P2.divA() - P1.divA()) + (P2.potential_term() - P1.potential_term())
    return A0, A, phit


def integral_identity_check(P1: PotentialField, P2: PotentialField, spec: ProbeSpec,
                            floor: float = 1e-12) -> IdentityCheck:
    """Both sides of the volume/boundary pairing for the probe pair built from ``spec``.

    lhs = ∫ (2 A0²¹ u_t - 2i A²¹·∇u + Φ̃ u) conj(v) over the space-time cylinder,
    rhs = ∫ (Λ2 f - Λ1 f) conj(f⁻) over the lateral boundary,
    with u the forward solution for P2 with probe data f and v the adjoint
    solution for P1 with probe data f⁻ (both numerical).
    """
    g = P2.grid
    if P1.grid is not g:
        raise ValidationError("potentials live on different grids")
    plus = spec.with_(sign="plus")
    minus = spec.with_(sign="minus")
    f = go_boundary_data(plus, P2)
    fm = go_boundary_data(minus, P1)

    dA0, dA, phit = _difference_coefficients(P1, P2)
    st = build_stencil(g, P2)
    live = (dA0.reshape(-1)[st.idx] != 0) | (dA[0].reshape(-1)[st.idx] != 0) | \
           (dA[1].reshape(-1)[st.idx] != 0) | (phit.reshape(-1)[st.idx] != 0)
    sel = st.idx[live]
    ip, im, jp, jm = st.ip[live], st.im[live], st.jp[live], st.jm[live]
    c0 = dA0.reshape(-1)[sel]
    c1 = dA[0].reshape(-1)[sel]
    c2 = dA[1].reshape(-1)[sel]
    cp = phit.reshape(-1)[sel]
    nt, dt = g.nt, g.dt
    wt = time_weights(g)
    vol = g.cell_volume

    adj = np.zeros((nt + 1, sel.size), dtype=complex)

    def keep(n, u, ut):
        adj[nt - n] = u[sel]

    solve_probe(minus, P1, fm, monitor=keep, monitor_every=1)

    acc = [0.0 + 0.0j]

    def pair(n, u, ut):
        g1 = (u[ip] - u[im]) / (2 * g.dx)
        g2 = (u[jp] - u[jm]) / (2 * g.dy)
        val = 2 * c0 * ut[sel] - 2j * (c1 * g1 + c2 * g2) + cp * u[sel]
        acc[0] += wt[n] * np.sum(val * np.conj(adj[n]))

    sol = solve_ibvp(P2, f, monitor=pair, monitor_every=1, stencil=st)
    lhs = complex(acc[0] * vol)
    g1 = dn_apply(P1, f)
    rhs = (sol.neumann - g1).inner(fm)
    den = max(abs(lhs), abs(rhs), floor)
    return IdentityCheck(lhs, rhs, abs(lhs - rhs) / den, floor)


# ---------------------------------------------------------------------------
# DN data and pointwise ray recovery


class DnData:
    """Measured DN differences ``Λ2 f - Λ1 f`` for a pair of potentials.

    Noise, when requested, is added to the measured Λ2 f with RMS ``noise``
    times its own RMS; each call draws from a child of one seeded generator,
    so results depend only on the seed and the call order.
    """

    def __init__(self, P1: PotentialField, P2: PotentialField, noise: float = 0.0,
                 seed: int | None = 0):
        if P1.grid is not P2.grid:
            raise ValidationError("potentials live on different grids")
        self.P1, self.P2 = P1, P2
        self.noise = float(noise)
        self.seed = seed
        self._ss = np.random.SeedSequence(seed)
        self._st1 = build_stencil(P1.grid, P1)
        self._st2 = build_stencil(P2.grid, P2)
        self.calls = 0

    @property
    def grid(self) -> WaveguideGrid:
        return self.P1.grid

    def difference(self, f: BoundaryTrace, key: tuple[int, ...] | None = None) -> BoundaryTrace:
        """``Λ2 f - Λ1 f``; ``key`` pins the noise stream (needed for parallel callers)."""
        self.calls += 1
        g2 = dn_apply(self.P2, f, stencil=self._st2)
        if self.noise > 0:
            if key is None:
                child = self._ss.spawn(1)[0]
            else:
                child = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
            g2 = add_noise(g2, self.noise, seed=int(child.generate_state(1)[0]))
        g1 = dn_apply(self.P1, f, stencil=self._st1)
        return g2 - g1


def default_alpha(grid: WaveguideGrid) -> float:
    """Ring width just inside the admissible window ``min(1, (T - diam)/3)``."""
    return 0.99 * min(1.0, (grid.T - diam(grid.cross_section)) / 3.0)


def ray_point(grid: WaveguideGrid, theta, rho: float, support: float, alpha: float) -> np.ndarray | None:
    """Probe center on the line ``c + rho theta_perp + s theta`` past the exit side.

    Picks the smallest s beyond the chord whose distance to the cross-section
    exceeds ``support`` (with a small margin).  Returns None when the line misses
    the cross-section or no admissible point lies in the ring of width ``alpha``.
    """
    cs = grid.cross_section
    th = np.asarray(theta, dtype=float)
    base = _center(grid) + rho * _perp(th)
    reach = diam(cs) + alpha + 1.0
    h = min(grid.dx, grid.dy) / 8
    s = np.arange(-reach, reach, h)
    pts = base + s[:, None] * th
    d = cs.distance(pts)
    inside = d <= 0
    if not inside.any():
        return None
    s_exit = s[np.nonzero(inside)[0].max()]
    beyond = (s > s_exit) & (d > 1.02 * support + 0.25 * h)
    if not beyond.any():
        return None
    k = np.nonzero(beyond)[0][0]
    if d[k] + support >= alpha:
        return None
    return pts[k]


def _check_smallness(P1: PotentialField, P2: PotentialField) -> float:
    M = P2.grid.T * (P2 - P1).linf()
    if not M < 2 * math.pi:
        raise ValidationError(f"smallness violated: T*|A21|_inf = {M:.4g} >= 2*pi")
    return M


def _probe_pair(grid, theta, x0, y0, lam, eps, radius, alpha):
    mollifier_pair(eps, x0, y0, radius=radius, cs=grid.cross_section, alpha=alpha)
    th = tuple(float(v) for v in theta)
    spec = ProbeSpec(th, float(lam), "plus", phi_center=tuple(float(v) for v in x0),
                     phi_width=eps, h_center=float(y0), h_width=eps, phi_radius=radius)
    return spec, spec.with_(sign="minus")


def recover_exponential_ray(data: DnData, theta, x0, y0: float, lam: float, gamma: float, *,
                            radius: float = 0.12, alpha: float | None = None,
                            tables: dict | None = None, key: tuple[int, ...] | None = None) -> complex:
    """Mollified ``exp(-∫_0^T (1,-theta)·A21(x0 - s theta) ds) - 1`` from DN data.

    The probe pair has width ``eps = lam**-gamma`` (support radius
    ``radius * eps``); the returned value is ``-<(Λ2 - Λ1) f, f⁻> / (2i lam)``.
    """
    if lam < 1:
        raise ValidationError(f"lambda={lam} must be >= 1")
    g = data.grid
    alpha = default_alpha(g) if alpha is None else alpha
    _check_smallness(data.P1, data.P2)
    eps = lam ** (-gamma)
    plus, minus = _probe_pair(g, theta, x0, y0, lam, eps, radius, alpha)
    t2 = t1 = None
    if tables is not None:
        tk = tuple(float(v) for v in theta)
        if tk not in tables:
            th = np.asarray(theta, dtype=float)
            tables[tk] = (RayTable(data.P2, th, -1), RayTable(data.P1, th, +1))
        t2, t1 = tables[tk]
    f = go_boundary_data(plus, data.P2, table=t2)
    fm = go_boundary_data(minus, data.P1, table=t1)
    pairing = data.difference(f, key).inner(fm)
    return complex(-pairing / (2j * lam))


def ray_from_exponential(v: complex, T: float, M: float) -> complex:
    """Ray integral ``a`` from ``v = exp(-a) - 1``: returns ``-log(1 + v)`` (principal branch).

    ``M`` bounds ``|a|`` (``T`` times the sup of the potential difference) and
    must stay below 2 pi.
    """
    if not M < 2 * math.pi:
        raise ValidationError(f"M = {M:.4g} >= 2*pi: exponential not invertible on the data window")
    if T <= 0:
        raise ValidationError("T must be positive")
    z = 1.0 + complex(v)
    if z.imag == 0.0 and z.real <= 0.0:
        raise NumericalError(f"1 + v = {z} lies on the branch cut; data too noisy")
    return -cmath.log(z)


def recover_phi_ray(data: DnData, theta, x0, y0: float, lam: float, delta: float, *,
                    vector_model: PotentialField | None = None, radius: float = 0.12,
                    alpha: float | None = None, key: tuple[int, ...] | None = None) -> complex:
    """Mollified ``∫_0^T Phi21(x0 - t theta) dt`` from DN data.

    The measured pairing contains the volume terms of both the vector and the
    scalar difference.  With ``vector_model`` (P1 plus the reconstructed vector
    difference) the same pairing is synthesized for the model pair and
    subtracted, leaving the Phi term; without it the vector difference is
    taken to be zero.
    """
    if lam < 1:
        raise ValidationError(f"lambda={lam} must be >= 1")
    g = data.grid
    alpha = default_alpha(g) if alpha is None else alpha
    _check_smallness(data.P1, data.P2)
    eps = lam ** (-delta)
    plus, minus = _probe_pair(g, theta, x0, y0, lam, eps, radius, alpha)
    f = go_boundary_data(plus, data.P2)
    fm = go_boundary_data(minus, data.P1)
    val = data.difference(f, key).inner(fm)
    if vector_model is not None:
        fh = go_boundary_data(plus, vector_model)
        model = (dn_apply(vector_model, fh) - dn_apply(data.P1, fh)).inner(fm)
        val -= model
    return complex(val)


# ---------------------------------------------------------------------------
# Radon samples and Fourier slices


@dataclass
class RadonSamples:
    """Ray values ``values[i, j, k]`` for direction ``thetas[i]``, offset ``offsets[j]``, slice ``ys[k]``."""

    thetas: np.ndarray
    offsets: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    kind: str = "vector"
    lam: float | None = None
    gamma: float | None = None
    beta: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float).reshape(-1, 2)
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.ys = np.atleast_1d(np.asarray(self.ys, dtype=float))
        self.values = np.asarray(self.values, dtype=complex)
        want = (self.thetas.shape[0], self.offsets.size, self.ys.size)
        if self.values.shape != want:
            raise ValidationError(f"radon values have shape {self.values.shape}, expected {want}")
        if np.any(np.abs(np.linalg.norm(self.thetas, axis=1) - 1) > 1e-12):
            raise ValidationError("ray directions must be unit vectors")
        d = np.diff(self.offsets)
        if self.offsets.size < 2 or np.any(d <= 0) or np.ptp(d) > 1e-9 * d.mean():
            raise ValidationError("ray offsets must be uniform and increasing")

    @property
    def spacing(self) -> float:
        return float(self.offsets[1] - self.offsets[0])

    def direction_index(self, theta, tol: float = 1e-10) -> int:
        th = np.asarray(theta, dtype=float)
        d = np.linalg.norm(self.thetas - th, axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise ValidationError(f"direction {th} not sampled")
        return i

    def nearest_direction(self, theta) -> int:
        return int(np.argmax(self.thetas @ np.asarray(theta, dtype=float)))


def _slice_transform(rs: RadonSamples, i: int, sigma, k: int) -> np.ndarray:
    """``∫ exp(-i rho sigma) R_i(rho) d rho`` by the trapezoid rule (values vanish at the ends)."""
    rho = rs.offsets
    w = np.full(rho.size, rs.spacing)
    w[0] = w[-1] = 0.5 * rs.spacing
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    return np.exp(-1j * np.outer(sigma, rho)) @ (w * rs.values[i, :, k])


def _nyquist(rs: RadonSamples, xi_norm: float) -> None:
    if xi_norm * rs.spacing > math.pi * (1 + 1e-12):
        raise ValidationError(
            f"|xi| = {xi_norm:.4g} above the offset Nyquist limit {math.pi / rs.spacing:.4g}"
        )


def fourier_slice_vector(rs: RadonSamples, theta, xi, k: int = 0) -> tuple[complex, complex]:
    """``(A0^(xi), theta·A^(xi))`` from vector rays in directions ``±theta``, for xi ⊥ theta.

    Transforms are taken about the cross-section center.
    """
    th = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if abs(float(xi @ th)) > 1e-10 * max(1.0, float(np.linalg.norm(xi))):
        raise ValidationError("xi must be orthogonal to theta")
    _nyquist(rs, float(np.linalg.norm(xi)))
    ip = rs.direction_index(th)
    im = rs.direction_index(-th)
    gp = _slice_transform(rs, ip, float(xi @ _perp(th)), k)[0]
    gm = _slice_transform(rs, im, float(xi @ _perp(-th)), k)[0]
    # g(+theta) = A0 - i theta·A, g(-theta) = A0 + i theta·A
    return complex(0.5 * (gp + gm)), complex(0.5j * (gp - gm))


def fourier_slice_scalar(rs: RadonSamples, theta, xi, k: int = 0) -> complex:
    """Phi^(xi) for xi ⊥ theta from scalar rays (averaged over ±theta when both exist)."""
    th = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if abs(float(xi @ th)) > 1e-10 * max(1.0, float(np.linalg.norm(xi))):
        raise ValidationError("xi must be orthogonal to theta")
    _nyquist(rs, float(np.linalg.norm(xi)))
    out = []
    for s in (th, -th):
        try:
            i = rs.direction_index(s)
        except ValidationError:
            continue
        out.append(_slice_transform(rs, i, float(xi @ _perp(s)), k)[0])
    if not out:
        raise ValidationError(f"direction {th} not sampled")
    return complex(np.mean(out))


def assemble_curl_hat(xi: np.ndarray, theta_dot_A_hat: np.ndarray) -> np.ndarray:
    """Fourier samples of curl A from ``theta(xi)·A^(xi)``, ``theta(xi) = (-xi_2, xi_1)/|xi|``."""
    xi = np.asarray(xi, dtype=float).reshape(-1, 2)
    v = np.asarray(theta_dot_A_hat, dtype=complex).reshape(-1)
    if v.size != xi.shape[0]:
        raise ValidationError("one sample per frequency is required")
    r = np.linalg.norm(xi, axis=1)
    miss = ~np.isfinite(v) & (r > 0)
    if miss.any():
        raise ValidationError(f"missing theta(xi) samples at {int(miss.sum())} frequencies")
    out = np.zeros_like(v)
    nz = r > 0
    out[nz] = 1j * r[nz] * v[nz]
    return out


# ---------------------------------------------------------------------------
# exponents


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x)) if isinstance(x, str) else Fraction(x).limit_denominator(10**12)


@dataclass(frozen=True)
class StabilityExponents:
    s0: Fraction
    s1: Fraction
    s2: Fraction
    sbar0: Fraction
    sbar1: Fraction
    sbar2: Fraction
    frak_a: Fraction
    frak_A: Fraction
    frak_b0: Fraction
    frak_b1: Fraction
    frak_b2: Fraction
    frak_c: Fraction
    frak_C: Fraction
    frak_d: Fraction
    frak_D: Fraction
    gamma: Fraction
    beta: Fraction
    delta: Fraction
    kappa: Fraction
    mu: Fraction
    zeta: Fraction
    eta: Fraction
    rho: Fraction
    tau: Fraction
    lambda0: float
    chi: float  # underflows to 0.0 for typical inputs; log_chi keeps the value
    log_chi: float

    def table(self) -> list[tuple[str, str, float]]:
        rows = []
        for name in ("frak_a", "frak_A", "frak_b0", "frak_b1", "frak_b2", "frak_c", "frak_C",
                     "frak_d", "frak_D", "gamma", "beta", "delta", "kappa", "mu", "zeta", "eta",
                     "rho", "tau", "lambda0", "chi", "log_chi"):
            v = getattr(self, name)
            rows.append((name, str(v), float(v)))
        return rows

    def cutoff_vector(self, lam: float) -> float:
        """Low-pass radius balancing measured and a priori parts for (A0, curl A)."""
        a, c, g = float(self.frak_a), float(self.frak_c), float(self.gamma)
        return (c / (1 + a)) ** (1 / (2 * (1 + a + c))) * lam ** (g / (1 + a + c))

    def cutoff_phi(self, lam: float) -> float:
        b2, s2, d = float(self.frak_b2), float(self.sbar2), float(self.delta)
        return (b2 / (1 + s2)) ** (1 / (2 * (1 + b2 + s2))) * lam ** (d / (1 + b2 + s2))


def compute_exponents(s0, s1, s2, sbar0, sbar1, sbar2, gamma, beta,
                      delta=None, kappa=None) -> StabilityExponents:
    """All exponents and gates, exact where the inputs are rational.

    ``delta``/``kappa`` default to ``gamma``/``beta``.
    """
    s0, s1, s2 = _frac(s0), _frac(s1), _frac(s2)
    sb0, sb1, sb2 = _frac(sbar0), _frac(sbar1), _frac(sbar2)
    gamma, beta = _frac(gamma), _frac(beta)
    delta = gamma if delta is None else _frac(delta)
    kappa = beta if kappa is None else _frac(kappa)
    if s0 < 2 or s1 < 2:
        raise ValidationError(f"need s0 >= 2 and s1 >= 2, got s0={s0}, s1={s1}")
    if s2 < 0:
        raise ValidationError(f"need s2 >= 0, got s2={s2}")
    b = [s0 - sb0, s1 - sb1, s2 - sb2]
    for j, bj in enumerate(b):
        if not (0 < bj < 1):
            raise ValidationError(f"b{j} = s{j} - sbar{j} = {bj} not in (0, 1)")
    eleven = Fraction(1, 11)
    if not (0 < gamma < eleven):
        raise ValidationError(f"gamma = {gamma} violates 0 < gamma < 1/11")
    if not beta >= 3 + 10 * gamma:
        raise ValidationError(f"beta = {beta} violates beta >= 3 + 10*gamma = {3 + 10 * gamma}")
    if not (0 < delta < eleven):
        raise ValidationError(f"delta = {delta} violates 0 < delta < 1/11")
    if not kappa >= 3 + 10 * delta:
        raise ValidationError(f"kappa = {kappa} violates kappa >= 3 + 10*delta = {3 + 10 * delta}")
    a = max(s0, s1)
    A = max(s0, s1, s2)
    c = min(b[0], b[1])
    C = min(b)
    d = (1 - b[1]) * (1 - b[2])
    D = (1 - b[0]) * (1 - b[1]) * (1 - b[2])
    mu = 2 * gamma * c / ((1 + a + c) * (gamma + beta))
    zeta = b[1] * b[2] * delta * mu / ((1 + sb2 + b[2]) * (delta + kappa))
    eta = C**4 * gamma**2 / ((1 + A + C) ** 2 * (gamma + beta) ** 2)
    rho = 1 / (gamma + beta)
    tau = b[1] * mu / (2 * (delta + kappa))
    lam0 = float((1 + a) / c) ** (1 / (2 * float(gamma)))
    log_chi = min(math.log(b[2] / (1 + sb2)) * float(delta + kappa) / float(delta * b[1] * mu),
                  math.log(c / (1 + a)) * float(gamma + beta) / (2 * float(gamma)))
    chi = math.exp(log_chi)
    for name, v in (("mu", mu), ("zeta", zeta), ("eta", eta)):
        if not (0 < v < 1):
            raise ValidationError(f"{name} = {v} not in (0, 1)")
    return StabilityExponents(
        s0, s1, s2, sb0, sb1, sb2, a, A, b[0], b[1], b[2], c, C, d, D,
        gamma, beta, delta, kappa, mu, zeta, eta, rho, tau, lam0, chi, log_chi,
    )


@dataclass
class LinftyBound:
    regime: str
    exponent: float
    exponents: dict
    prefactor: str
    rhs: float
    at_boundary: bool


def linfty_bounds(ex: StabilityExponents, dn_norm: float, regime: str | None = None) -> LinftyBound:
    """Shape of the sup-norm bound for the vector potential with the unknown constant set to 1.

    The small regime (``dn_norm <= lambda0**(-1/rho)``) uses exponent ``b1 mu / 2``,
    the large regime uses ``mu``.  ``regime`` forces one of them.
    """
    if dn_norm < 0:
        raise ValidationError("dn_norm must be non-negative")
    mu = float(ex.mu)
    small_exp = float(ex.frak_b1) * mu / 2
    thr = ex.lambda0 ** (-1.0 / float(ex.rho))
    auto = "small" if dn_norm <= thr else "large"
    reg = auto if regime is None else regime
    if reg not in ("small", "large"):
        raise ValidationError(f"regime must be small or large, got {regime!r}")
    a, c, dd = float(ex.frak_a), float(ex.frak_c), float(ex.frak_d)
    if reg == "small":
        pre = 4**a / (c * dd) * ((1 + a) / c) ** (c * float(ex.frak_b1) / (1 + a + c))
        txt = "4^a/(c d) * ((1+a)/c)^(c b1/(1+a+c))"
        e = small_exp
    else:
        pre = 4**a / (c * dd) * ((1 + a) / c) ** (c / (1 + a + c))
        txt = "4^a/(c d) * ((1+a)/c)^(c/(1+a+c))"
        e = mu
    rhs = 0.0 if dn_norm == 0 else pre * dn_norm**e
    at = bool(np.isclose(dn_norm, thr, rtol=1e-12, atol=0.0))
    return LinftyBound(reg, e, {"small": small_exp, "large": mu}, txt, rhs, at)


# ---------------------------------------------------------------------------
# field inversion


@dataclass
class ReconstructionReport:
    A0_21: np.ndarray
    curlA_21: np.ndarray
    Phi_21: np.ndarray | None
    errors: dict
    references: dict
    cutoff: float
    cutoff_phi: float | None
    dn_norm_lb: float | None = None
    lam_schedule: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _freq_grid(grid: WaveguideGrid, pad: int = 2):
    cs = grid.cross_section
    n1, n2 = pad * cs.x1.size, pad * cs.x2.size
    k1 = 2 * np.pi * np.fft.fftfreq(n1, grid.dx)
    k2 = 2 * np.pi * np.fft.fftfreq(n2, grid.dy)
    return np.meshgrid(k1, k2, indexing="ij")


def _to_space(grid: WaveguideGrid, F: np.ndarray, pad: int = 2) -> np.ndarray:
    """Inverse of the continuous transform about the center, sampled on the lattice."""
    cs = grid.cross_section
    K1, K2 = _freq_grid(grid, pad)
    c = _center(grid)
    x0 = np.array([cs.x1[0], cs.x2[0]])
    # F(xi) = ∫ f(x) exp(-i xi·(x - c)) dx; the DFT uses x - x0
    shift = np.exp(1j * (K1 * (x0[0] - c[0]) + K2 * (x0[1] - c[1])))
    f = np.fft.ifft2(F * shift) / (grid.dx * grid.dy)
    return f[: cs.x1.size, : cs.x2.size]


def lattice_transform(grid: WaveguideGrid, field2: np.ndarray, pad: int = 2) -> np.ndarray:
    """Riemann-sum transform about the center on the padded frequency grid."""
    cs = grid.cross_section
    n1, n2 = pad * cs.x1.size, pad * cs.x2.size
    K1, K2 = _freq_grid(grid, pad)
    c = _center(grid)
    x0 = np.array([cs.x1[0], cs.x2[0]])
    shift = np.exp(-1j * (K1 * (x0[0] - c[0]) + K2 * (x0[1] - c[1])))
    return np.fft.fft2(field2, s=(n1, n2)) * grid.dx * grid.dy * shift


def _check_cutoff(grid: WaveguideGrid, r: float, pad: int = 2) -> None:
    cell = 2 * np.pi / (pad * max(grid.cross_section.x1.size * grid.dx,
                                  grid.cross_section.x2.size * grid.dy))
    if r < cell:
        raise ValidationError(f"cutoff r = {r:.4g} below one Fourier cell ({cell:.4g})")


def _fourier_from_rays(grid, rs: RadonSamples, r: float, k: int, what: str, pad: int = 2):
    """Fourier data of A0, curl A (vector rays) or Phi (scalar rays) inside |xi| <= r."""
    K1, K2 = _freq_grid(grid, pad)
    R = np.hypot(K1, K2)
    inside = R <= r
    out = np.zeros(K1.shape, dtype=complex)
    if r * rs.spacing > math.pi * (1 + 1e-12):
        raise ValidationError(
            f"cutoff r = {r:.4g} above the offset Nyquist limit {math.pi / rs.spacing:.4g}"
        )
    pos = np.nonzero(inside & (R > 0))
    xi = np.stack([K1[pos], K2[pos]], axis=-1)
    th_xi = np.stack([-xi[:, 1], xi[:, 0]], axis=-1) / R[pos][:, None]
    nearest = np.argmax(th_xi @ rs.thetas.T, axis=1)
    vals = np.zeros(xi.shape[0], dtype=complex)
    for i in np.unique(nearest):
        sel = nearest == i
        th = rs.thetas[i]
        # radius along theta_i's perpendicular, sign from the orientation of xi
        sig = R[pos][sel] * np.sign(xi[sel] @ _perp(th))
        sig[sig == 0] = R[pos][sel][sig == 0]
        gp = _slice_transform(rs, i, sig, k)
        if what == "phi":
            try:
                j = rs.direction_index(-th)
                gm = _slice_transform(rs, j, -sig, k)
                vals[sel] = 0.5 * (gp + gm)
            except ValidationError:
                vals[sel] = gp
            continue
        j = rs.direction_index(-th)
        gm = _slice_transform(rs, j, -sig, k)
        if what == "A0":
            vals[sel] = 0.5 * (gp + gm)
        else:
            # theta_i·A^ then curl: i |xi| theta(xi)·A^
            vals[sel] = 1j * R[pos][sel] * (0.5j * (gp - gm))
    out[pos] = vals
    if what != "curl":
        zero = np.nonzero(R == 0)
        if what == "phi":
            out[zero] = _slice_transform(rs, 0, 0.0, k)[0]
        else:
            j = rs.direction_index(-rs.thetas[0])
            out[zero] = 0.5 * (_slice_transform(rs, 0, 0.0, k)[0] + _slice_transform(rs, j, 0.0, k)[0])
    return out


def invert_fields(vector_rays: RadonSamples | None, grid: WaveguideGrid, r: float, *,
                  phi_rays: RadonSamples | None = None, r_phi: float | None = None,
                  exponents: StabilityExponents | None = None,
                  truth: tuple[PotentialField, PotentialField] | None = None,
                  fourier: dict | None = None, pad: int = 2,
                  slices=None) -> ReconstructionReport:
    """Low-pass reconstruction of A0²¹, curl A²¹ and Phi21 on every axial slice.

    Fourier data inside ``|xi| <= r`` come from the rays (nearest sampled
    angle, exact radius); everything outside is set to zero.  ``fourier`` may
    instead supply callables ``{"A0"|"curl"|"phi": f(k) -> padded-grid array}``
    of exact transforms, which bypasses the rays.  With ``truth = (P1, P2)``
    Sobolev errors of orders sbar0, sbar1 - 1 and sbar2 are reported (max over
    slices, with the per-slice values in ``meta["per_slice"]``).  ``slices``
    lists the axial indices the ray data refer to (default: all of them); the
    returned fields hold only those slices.
    """
    _check_cutoff(grid, r, pad)
    r_phi = r if r_phi is None else r_phi
    K1, K2 = _freq_grid(grid, pad)
    R = np.hypot(K1, K2)
    slices = list(range(grid.shape[0])) if slices is None else [int(k) for k in slices]
    nk = len(slices)
    shp = (nk,) + grid.shape[1:]
    A0 = np.zeros(shp, dtype=complex)
    curl = np.zeros(shp, dtype=complex)
    Phi = np.zeros(shp, dtype=complex) if (phi_rays is not None or (fourier and "phi" in fourier)) else None
    if vector_rays is None and not fourier:
        raise ValidationError("no slice data")
    for rs in (vector_rays, phi_rays):
        if rs is not None and rs.ys.size != nk:
            raise ValidationError(f"ray data carry {rs.ys.size} slices, expected {nk}")
    spectra = {"A0": [], "curl": [], "phi": []}
    for k in range(nk):
        for name, target, rr in (("A0", A0, r), ("curl", curl, r), ("phi", Phi, r_phi)):
            if target is None:
                continue
            if fourier is not None and name in fourier:
                F = np.where(R <= rr, fourier[name](k), 0.0)
            elif name == "phi":
                F = _fourier_from_rays(grid, phi_rays, rr, k, "phi", pad)
            else:
                F = _fourier_from_rays(grid, vector_rays, rr, k, name, pad)
            spectra[name].append(F)
            target[k] = _to_space(grid, F, pad)
    errors, refs, per_slice = {}, {}, {}
    if truth is not None:
        P1, P2 = truth
        ex = exponents
        s_a0 = float(ex.sbar0) if ex is not None else 0.0
        s_c = float(ex.sbar1) - 1 if ex is not None else 0.0
        s_p = float(ex.sbar2) if ex is not None else 0.0
        tA0 = (P2.A0 - P1.A0)[slices]
        tc = np.stack([curl2d(P2.A[:, k] - P1.A[:, k], grid.dx, grid.dy) for k in slices])
        tP = (P2.Phi - P1.Phi)[slices]
        pairs = [("A0", "A0", tA0, s_a0), ("curlA", "curl", tc, s_c)]
        if Phi is not None:
            pairs.append(("Phi", "phi", tP, s_p))
        # norms on the padded frequency grid: the low-pass field is not cut
        # off at the edge of the cross-section lattice
        cell = grid.dx * grid.dy * R.size
        for name, key, tru, s in pairs:
            wgt = (1.0 + R**2) ** s / cell
            e, z = [], []
            for k in range(nk):
                Ft = lattice_transform(grid, tru[k], pad)
                e.append(float(np.sqrt(np.sum(wgt * np.abs(spectra[key][k] - Ft) ** 2))))
                z.append(float(np.sqrt(np.sum(wgt * np.abs(Ft) ** 2))))
            errors[name] = max(e)
            refs[name] = max(z)
            per_slice[name] = e
    return ReconstructionReport(A0, curl, Phi, errors, refs, r, r_phi if Phi is not None else None,
                                meta={"slices": slices, "per_slice": per_slice})
