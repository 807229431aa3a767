import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnlab.errors import ValidationError
from dnlab.lab import (ConfigError, ExperimentConfig, StabilityCurve, beam_probe, build_pair, fit_slope,
                       gate_record, gauge_defect, load_curve, oracle_radon, oracle_radon_samples,
                       run_experiment)
from dnlab.potentials import Bump, PotentialField, from_bumps, zero_potential
from dnlab.reconstruct import compute_exponents

from oracles import bump_line_integral


def test_fit_slope_identity():
    s, b, r2 = fit_slope([(x, x) for x in (0.1, 1.0, 2.0, 7.0)])
    assert abs(s - 1) < 1e-12 and abs(b) < 1e-12 and abs(r2 - 1) < 1e-12


def test_fit_slope_power_law():
    xs = np.geomspace(1e-3, 10, 9)
    s, b, _ = fit_slope(zip(xs, 3 * xs**0.5))
    assert abs(s - 0.5) < 1e-10 and abs(b - math.log(3)) < 1e-10


def test_fit_slope_noisy(rng):
    xs = np.geomspace(1e-4, 1, 20)
    ys = xs**0.5 * (1 + 0.01 * rng.uniform(-1, 1, xs.size))
    assert 0.45 <= fit_slope(zip(xs, ys))[0] <= 0.55


@given(st.floats(-3, 3), st.floats(0.01, 100.0), st.lists(st.floats(1e-3, 1e3), min_size=4, max_size=12, unique=True))
def test_fit_slope_exact_power(p, c, xs):
    if np.ptp(np.log(xs)) < 1e-3:
        return
    s, b, r2 = fit_slope([(x, c * x**p) for x in xs])
    assert abs(s - p) < 1e-8 and abs(b - math.log(c)) < 1e-7


def test_fit_slope_errors():
    with pytest.raises(ValidationError, match="at least 4"):
        fit_slope([(1, 1), (2, 2), (3, 3)])
    with pytest.raises(ValidationError, match="positive"):
        fit_slope([(1, 1), (2, -2), (3, 3), (4, 4)])
    with pytest.raises(ValidationError, match="degenerate"):
        fit_slope([(2, 1), (2, 2), (2, 3), (2, 4)])


def test_oracle_radon_zero(g32):
    assert oracle_radon(zero_potential(g32), "vector", (1.0, 0.0), (0.0, 0.0)) == 0


def test_oracle_radon_plateau(g32):
    # A0 = c on a strip of lattice nodes; the interpolant integrates to c per
    # cell, so the chord is the union of the node cells
    c = 0.7
    cs = g32.cross_section
    strip = (np.abs(cs.x1) <= 0.25)[:, None] & np.ones(cs.x2.size, bool)[None, :]
    A0 = np.where(strip, c, 0.0)[None]
    z = np.zeros(g32.shape)
    P = PotentialField(g32, A0, np.zeros((2,) + g32.shape), z, bumps=None)
    chord = strip[:, 0].sum() * g32.dx
    v = oracle_radon(P, "vector", (1.0, 0.0), (0.0, cs.x2[20]))
    assert abs(v - c * chord) < 1e-8


@pytest.mark.parametrize("d", [0.0, 0.1, 0.25, 0.4])
def test_oracle_radon_bump_closed_form(g64, d):
    w, amp = 0.3, 0.8
    P = from_bumps(g64, [Bump("A0", (0.05, -0.02), w, amp), Bump("Phi", (0.05, -0.02), w, -1.5)])
    v = oracle_radon(P, "vector", (1.0, 0.0), (0.3, -0.02 + d))
    assert abs(v - amp * bump_line_integral(d, w)) < 1e-9
    ph = oracle_radon(P, "phi", (0.0, 1.0), (0.05 + d, 0.2))
    assert abs(ph + 1.5 * bump_line_integral(d, w)) < 1e-9


def test_oracle_radon_vector_sign(g64):
    e = (0.4, -0.3)
    P = from_bumps(g64, [Bump("A", (0.0, 0.0), 0.3, e)])
    th = np.array([0.6, 0.8])
    v = oracle_radon(P, "vector", th, (0.0, 0.0))
    assert abs(v - (-1j) * (th @ e) * bump_line_integral(0.0, 0.3)) < 1e-9
    with pytest.raises(ValidationError):
        oracle_radon(P, "curl", th, (0.0, 0.0))


def test_oracle_samples_shape(g32):
    P2 = from_bumps(g32, [Bump("A0", (0.0, 0.0), 0.3, 0.5)])
    rs = oracle_radon_samples(zero_potential(g32), P2, "vector", 8, 9)
    assert rs.values.shape == (8, 9, 1)
    # the outermost offsets reach past the square: the line misses the support
    assert np.all(rs.values[:, [0, -1], 0] == 0)


# -- configuration -------------------------------------------------------

def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_config_defaults():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.mode == "slice" and cfg.resolution == 64 and cfg.lam == 16.0
    assert cfg.stability_exponents().mu.denominator == 329


def test_config_missing(tmp_path):
    with pytest.raises(ConfigError, match="config not found"):
        ExperimentConfig.from_toml(tmp_path / "missing.toml")


@pytest.mark.parametrize("text,where", [
    ("[grid]\nresolution = 4\n", "grid.resolution"),
    ("[grid]\nmode = \"cube\"\n", "grid.mode"),
    ("[potentials]\nscales = [0.1, -1]\n", "potentials.scales[1]"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[grid]\ncolour = 1\n", "grid.colour"),
    ("[exponents]\ngamma = \"one\"\n", "exponents.gamma"),
    ("[schedule]\nphi = 3\n", "schedule.phi"),
    ("[probes]\nlambdas = [0.5]\n", "probes.lambdas"),
    ("[grid\n", "cfg.toml"),
])
def test_config_errors_name_location(tmp_path, text, where):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_toml(_write(tmp_path, text))
    assert where in str(e.value)


def test_config_hash_ignores_output(tmp_path):
    a = ExperimentConfig.from_dict({"output": {"dir": "a"}})
    b = ExperimentConfig.from_dict({"output": {"dir": "b"}})
    c = ExperimentConfig.from_dict({"noise": {"seed": 3}})
    assert a.hash == b.hash != c.hash
    assert a.override(seed=3).hash == c.hash


def test_build_pair_scales():
    cfg = ExperimentConfig.from_dict({"grid": {"resolution": 16}})
    g = cfg.grid()
    P1, P2 = build_pair(cfg, g, 0.0)
    assert np.array_equal(P1.A0, P2.A0) and np.array_equal(P1.Phi, P2.Phi)
    _, P3 = build_pair(cfg, g, 0.5)
    _, P4 = build_pair(cfg, g, 1.0)
    assert np.allclose(P4.A0 - P1.A0, 2 * (P3.A0 - P1.A0))


def test_gate_record():
    ex = compute_exponents(2, 2, 1, "3/2", "3/2", "1/2", "1/12", "23/6")
    rec = gate_record(ex, 0.1)
    assert rec["optimistic"] is True
    assert rec["regime"] == "large" and not rec["below_chi"]
    assert gate_record(ex, 0.0)["below_chi"] and gate_record(ex, 0.0)["linf_rhs"] == 0.0


def test_gauge_defect_small_and_finite(g32):
    P = from_bumps(g32, [Bump("A0", (0.0, 0.0), 0.3, 0.3)])
    spec = beam_probe(g32, (1.0, 0.0), 6.0)
    d = gauge_defect(P, Bump("Phi", (0.0, 0.0), 0.3, 0.2, power=5), spec)
    print("gauge defect at 32^2:", d)
    assert np.isfinite(d) and 0 <= d < 0.1
    with pytest.raises(ValidationError, match="inside"):
        gauge_defect(P, Bump("Phi", (0.4, 0.0), 0.3, 0.2), spec)


def test_stability_curve_needs_four_points():
    pts = [(1e-3, {"A0": 0.1}), (1e-2, {"A0": 0.2}), (1e-1, {"A0": 0.4})]
    c = StabilityCurve.build(pts, {"A0": ("mu", 0.01)})
    assert c.slopes["A0"] is None
    c = StabilityCurve.build(pts + [(1.0, {"A0": 0.8})], {"A0": ("mu", 0.01)})
    assert abs(c.slopes["A0"][0] - math.log10(2) * 1) < 0.05 and c.monotone("A0")


# -- small end-to-end runs -----------------------------------------------

SMALL = """
[grid]
resolution = 24
[potentials]
base = [{{kind = "Phi", center = [0.1, 0.0], width = 0.3, amplitude = 1.0}}]
perturbation = [{{kind = "A0", center = [0.0, 0.05], width = 0.3, amplitude = 0.3}},
                {{kind = "A_rot", center = [0.0, 0.0], width = 0.3, amplitude = 0.01}}]
scales = {scales}
[probes]
lambdas = [6]
angles = 2
[schedule]
lambda = 6.0
cutoff = 4.0
angles = 4
offsets = 7
phi = {phi}
[output]
dir = "{out}"
"""


def _small(tmp_path, name, scales="[0.0]", phi="false"):
    out = tmp_path / name
    p = _write(tmp_path, SMALL.format(scales=scales, phi=phi, out=out), f"{name}.toml")
    return ExperimentConfig.from_toml(p)


def test_run_zero_scale(tmp_path):
    out = run_experiment(_small(tmp_path, "zero", phi="true"))
    curve = load_curve(out)
    assert len(curve.points) == 1
    dn, errs = curve.points[0]
    assert dn <= 1e-12
    assert all(v == 0 for v in errs.values())
    with open(out / "metadata.json") as fh:
        meta = json.load(fh)
    for key in ("config_hash", "seed", "versions", "grid", "exponents", "gates", "caveat"):
        assert key in meta
    assert meta["versions"]["norm"].startswith("d32-v1")
    assert (out / "config.toml").is_file() and (out / "log.jsonl").is_file()


def test_run_deterministic(tmp_path):
    a = run_experiment(_small(tmp_path, "a", scales="[0.5, 1.0]"))
    b = run_experiment(_small(tmp_path, "b", scales="[0.5, 1.0]"))
    for name in ("curve.csv", "slopes.csv", "scale_0/dn_ratios.csv", "scale_1/errors.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = (a / "curve.csv").read_text().splitlines()
    dn = [float(r.split(",")[1]) for r in rows[1:]]
    assert dn[0] < dn[1]


def test_run_threads_do_not_change_output(tmp_path):
    a = run_experiment(_small(tmp_path, "t1", scales="[1.0]"))
    b = run_experiment(_small(tmp_path, "t2", scales="[1.0]").override(threads=3))
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()


def test_run_failure_record(tmp_path):
    cfg = _small(tmp_path, "bad", scales="[0.0]")
    cfg = ExperimentConfig.from_dict(dict(cfg.raw, schedule=dict(cfg.raw["schedule"], **{"lambda": 60.0})))
    cfg = cfg.override(out=tmp_path / "bad")
    with pytest.raises(ValidationError, match="under-resolved"):
        run_experiment(cfg)
    rec = json.loads((tmp_path / "bad" / "failure.json").read_text())
    assert rec["exit_code"] == 2 and rec["stage"] == "validate"
