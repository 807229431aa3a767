import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dnlab.errors import ValidationError
from dnlab.potentials import (Bump, PotentialField, check_admissible, curl2d, divergence2d,
                              divergence_free_project, from_bumps, largest_stable_s,
                              make_bump_potential, sobolev_norm_slice, vector_from_curl,
                              w2inf_norm, zero_potential)

from oracles import profile_derivs


def test_zero_amplitude_is_zero(g32):
    P = make_bump_potential(g32, [(0.0, 0.0)], [0.0], [0.3], "A0")
    assert not P.A0.any() and not P.A.any() and not P.Phi.any()


def test_phi_peak(g64):
    c = (0.05, -0.03)
    P = make_bump_potential(g64, [c], [1.0], [0.3], "Phi")
    val = P.evaluate(np.array(c))[3]
    assert val == pytest.approx(1.0, abs=1e-6)
    assert P.Phi.max() <= 1.0


def test_overlapping_bumps_add(g32):
    cs, ws, amps = [(0.0, 0.0), (0.1, 0.05)], [0.3, 0.25], [1.0, -0.4]
    both = make_bump_potential(g32, cs, amps, ws, "Phi")
    one = make_bump_potential(g32, cs[:1], amps[:1], ws[:1], "Phi")
    two = make_bump_potential(g32, cs[1:], amps[1:], ws[1:], "Phi")
    assert np.max(np.abs(both.Phi - (one.Phi + two.Phi))) == 0.0


def test_bump_overflow_and_width(g32):
    with pytest.raises(ValidationError, match="overflows"):
        make_bump_potential(g32, [(0.4, 0.0)], [1.0], [0.3], "A0")
    with pytest.raises(ValidationError):
        make_bump_potential(g32, [(0.0, 0.0)], [1.0], [-0.1], "A0")
    with pytest.raises(ValidationError):
        make_bump_potential(g32, [(0.0, 0.0)], [1.0], [0.1], "B")


def test_vector_bump_vanishes_at_boundary(g32):
    P = make_bump_potential(g32, [(0.0, 0.1)], [(0.5, -0.2)], [0.3], "A")
    cs = g32.cross_section
    bi, bj = cs.bnd_index.T
    assert np.all(P.A[:, 0, bi, bj] == 0.0)


def test_admissible_zero_pair(g32):
    Z = zero_potential(g32)
    rep = check_admissible(Z, Z, 1.0, 1.0, 2, 2, 1, g32.T)
    assert rep.passes_R1 and rep.passes_R2
    assert rep.smallness_margin == pytest.approx(2 * math.pi / g32.T)
    assert all(v == (0.0, 0.0) for v in rep.sobolev_norms.values())
    assert rep.w2inf_norm_A == (0.0, 0.0)


def test_admissible_margin_boundary(g64):
    c = (0.0, 0.0)
    amp = 2 * math.pi / g64.T
    P2 = make_bump_potential(g64, [c], [amp], [0.3], "A0")
    rep = check_admissible(zero_potential(g64), P2, 1e3, 1e3, 2, 2, 1, g64.T)
    # the bump peak sits on a lattice node
    assert rep.smallness_margin == pytest.approx(0.0, abs=1e-12)
    assert not rep.smallness_margin > 0


def test_admissible_rejects_bad_orders(g32):
    Z = zero_potential(g32)
    with pytest.raises(ValidationError):
        check_admissible(Z, Z, 1, 1, 1.5, 2, 1, g32.T)


def test_w2inf_matches_dense_oracle(g64):
    w = 0.3
    P = make_bump_potential(g64, [(0.0, 0.0)], [1.0], [w], "A0")
    # oracle: the largest second derivative of (1 - r^2/w^2)^3 on a 10x finer lattice
    h = g64.dx / 10
    x = np.arange(-w, w + h, h)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = (np.clip(1 - (X**2 + Y**2) / w**2, 0, None)) ** 3
    fxx = (f[2:, 1:-1] - 2 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / h**2
    fyy = (f[1:-1, 2:] - 2 * f[1:-1, 1:-1] + f[1:-1, :-2]) / h**2
    fxy = (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / (4 * h * h)
    sup = max(np.abs(fxx).max(), np.abs(fyy).max(), np.abs(fxy).max())
    assert w2inf_norm(P.A0[0], g64.dx, g64.dy) == pytest.approx(sup, rel=0.02)


def test_sobolev_zero():
    assert sobolev_norm_slice(np.zeros((16, 16)), 1.5, 0.1) == 0.0


def test_sobolev_plancherel(rng):
    f = np.zeros((48, 48))
    f[16:32, 16:32] = rng.standard_normal((16, 16))
    dx = 0.05
    ref = math.sqrt((f**2).sum() * dx * dx)
    assert sobolev_norm_slice(f, 0.0, dx) == pytest.approx(ref, rel=1e-10)


def test_sobolev_h2_real_space():
    h, w = 1 / 128, 0.3
    x = np.arange(-0.75, 0.75, h)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f, gx, gy, lap = profile_derivs(X, Y, 0.0, 0.0, w)
    # ||<D>^2 f||^2 = ||f||^2 + 2 ||grad f||^2 + ||Lap f||^2
    ref = math.sqrt(((f**2) + 2 * (gx**2 + gy**2) + lap**2).sum() * h * h)
    assert sobolev_norm_slice(f, 2.0, h) == pytest.approx(ref, rel=0.01)


def test_sobolev_padding_error():
    f = np.ones((8, 8))
    with pytest.raises(ValidationError, match="padding"):
        sobolev_norm_slice(f, 1.0, 0.1, autopad=False)


@given(hnp.arrays(float, (12, 12), elements=st.floats(-1, 1)), st.floats(0, 3), st.floats(0, 3))
def test_sobolev_monotone_in_s(f, s, t):
    f = np.pad(f, 12)
    lo, hi = min(s, t), max(s, t)
    assert sobolev_norm_slice(f, lo, 0.1) <= sobolev_norm_slice(f, hi, 0.1) * (1 + 1e-12)


def _grid_fields(n=64, seed=0):
    h = 1.0 / n
    x = (np.arange(n) - n / 2) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    rng = np.random.default_rng(seed)
    A = np.zeros((2, n, n))
    for _ in range(2):
        c = rng.uniform(-0.1, 0.1, 2)
        f, *_ = profile_derivs(X, Y, c[0], c[1], 0.25)
        A += rng.uniform(-1, 1, (2, 1, 1)) * f
    return X, Y, A, h


def test_projector_idempotent_on_rotated_gradient():
    X, Y, _, h = _grid_fields()
    psi = np.exp(-((X**2 + Y**2) / 0.02))
    A = np.stack([-(np.roll(psi, -1, 1) - np.roll(psi, 1, 1)) / (2 * h),
                  (np.roll(psi, -1, 0) - np.roll(psi, 1, 0)) / (2 * h)])
    assert np.max(np.abs(divergence_free_project(A, h, h) - A)) < 1e-10 * np.abs(A).max()


def test_projector_kernel_is_gradient():
    X, Y, _, h = _grid_fields()
    psi = np.exp(-((X**2 + Y**2) / 0.02))
    A = np.stack([(np.roll(psi, -1, 0) - np.roll(psi, 1, 0)) / (2 * h),
                  (np.roll(psi, -1, 1) - np.roll(psi, 1, 1)) / (2 * h)])
    assert np.max(np.abs(divergence_free_project(A, h, h))) < 1e-8


def test_projector_keeps_curl_and_kills_divergence():
    _, _, A, h = _grid_fields(seed=3)
    B = divergence_free_project(A, h, h)
    # independent real-space curl: forward differences shifted to the same points
    def curl(V):
        return ((np.roll(V[1], -1, 0) - np.roll(V[1], 1, 0))
                - (np.roll(V[0], -1, 1) - np.roll(V[0], 1, 1))) / (2 * h)
    assert np.max(np.abs(np.fft.fft2(curl(B)) - np.fft.fft2(curl(A)))) < 1e-10 * np.abs(np.fft.fft2(curl(A))).max()
    assert np.abs(divergence2d(B, h, h)).max() <= 1e-8 * np.abs(A).max()


@given(st.integers(0, 2**31 - 1))
def test_projector_properties(seed):
    _, _, A, h = _grid_fields(32, seed)
    B = divergence_free_project(A, h, h)
    assert np.max(np.abs(divergence_free_project(B, h, h) - B)) < 1e-10 * max(np.abs(A).max(), 1e-300)
    assert np.max(np.abs(curl2d(B, h, h) - curl2d(A, h, h))) < 1e-8 * max(np.abs(curl2d(A, h, h)).max(), 1e-300)


def test_curl_rigid_rotation():
    n, h = 64, 1 / 64
    x = (np.arange(n) - n / 2) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    plateau = np.where(X**2 + Y**2 < 0.3**2, 1.0, np.clip(1 - (np.hypot(X, Y) - 0.3) / 0.1, 0, 1))
    A = np.stack([-Y * plateau, X * plateau])
    c = curl2d(A, h, h)
    inner = X**2 + Y**2 < 0.2**2
    assert np.max(np.abs(c[inner] - 2.0)) < 1e-6


def test_curl_of_gradient_small():
    n, h = 64, 1 / 64
    x = (np.arange(n) - n / 2) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    psi = np.sin(3 * X) * np.cos(2 * Y)
    A = np.stack([3 * np.cos(3 * X) * np.cos(2 * Y), -2 * np.sin(3 * X) * np.sin(2 * Y)])
    c = curl2d(A, h, h)[2:-2, 2:-2]
    assert np.abs(c).max() < 10 * h * h


def test_curl_second_order():
    w = 0.3
    errs = []
    for n in (64, 128):
        h = 1.0 / n
        x = (np.arange(n) - n / 2) * h
        X, Y = np.meshgrid(x, x, indexing="ij")
        f, gx, gy, lap = profile_derivs(X, Y, 0.0, 0.0, w, p=5)
        # A = rotated gradient of f has curl = Lap f
        A = np.stack([-gy, gx])
        errs.append(np.abs(curl2d(A, h, h) - lap).max())
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_vector_from_curl_roundtrip():
    _, _, A, h = _grid_fields(seed=7)
    A = np.pad(A, ((0, 0), (16, 16), (16, 16)))
    B = divergence_free_project(A, h, h)
    c = curl2d(B, h, h)
    V = vector_from_curl(c, h, h)
    assert np.abs(curl2d(V, h, h) - c)[4:-4, 4:-4].max() < 1e-3 * np.abs(c).max()


def test_admissible_idempotent(g32):
    P1 = from_bumps(g32, [Bump("A0", (0.0, 0.0), 0.3, 0.2)])
    P2 = from_bumps(g32, [Bump("A_rot", (0.05, 0.0), 0.3, 0.01, 4)])
    a = check_admissible(P1, P2, 10, 10, 2, 2, 1, g32.T)
    b = check_admissible(P1, P2, 10, 10, 2, 2, 1, g32.T)
    assert a == b


def test_a_rot_is_divergence_free(g64):
    P = from_bumps(g64, [Bump("A_rot", (0.0, 0.05), 0.3, 0.02, 4)])
    curl = curl2d(P.A[:, 0], g64.dx, g64.dy)
    assert np.abs(P.divA()).max() < 1e-2 * np.abs(curl).max()


def test_field_arithmetic(g32):
    P = from_bumps(g32, [Bump("A0", (0.0, 0.0), 0.3, 0.2), Bump("A", (0.0, 0.0), 0.3, (0.1, 0.0))])
    Q = P - P
    assert Q.linf() == 0.0
    assert np.array_equal(P.reflected().A0, -P.A0)
    assert np.array_equal(P.with_A_sign(-1).A, -P.A)
    assert not P.only("A0").A.any()
    pts = np.array([[0.01, 0.02]])
    assert P.scaled(2.0).evaluate(pts)[0] == pytest.approx(2 * P.evaluate(pts)[0])


def test_interpolated_evaluation_matches_bumps(g64):
    P = from_bumps(g64, [Bump("Phi", (0.0, 0.0), 0.3, 1.0)])
    Q = PotentialField(g64, P.A0, P.A, P.Phi, bumps=None)
    pts = np.array([[0.013, -0.021], [0.1, 0.05]])
    assert np.allclose(Q.evaluate(pts)[3], P.evaluate(pts)[3], atol=1e-3)


def test_largest_stable_s(g32):
    P = from_bumps(g32, [Bump("A0", (0.0, 0.0), 0.3, 0.2)])
    s = largest_stable_s(P)
    assert 0.0 <= s <= 4.0
    with pytest.raises(ValidationError):
        largest_stable_s(PotentialField(g32, P.A0, P.A, P.Phi, bumps=None))
