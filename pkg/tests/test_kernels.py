import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnlab import kernels
from dnlab.potentials import Bump, from_bumps
from dnlab.solver import solve_ibvp
from dnlab.traces import BoundaryTrace

from conftest import square_grid

needs_cython = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                  reason="compiled kernels not built")


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    with kernels.use_backend("python"):
        assert kernels.BACKEND == "python"
    with pytest.raises(ValueError):
        with kernels.use_backend("fortran"):
            pass


@needs_cython
@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_interp_parity(seed):
    rng = np.random.default_rng(seed)
    arr = rng.standard_normal((9, 11)) + 1j * rng.standard_normal((9, 11))
    pts = rng.uniform(-0.3, 1.3, (50, 2))
    with kernels.use_backend("python"):
        a = kernels.interp_cubic(arr, 0.0, 0.0, 0.1, 0.1, pts)
    with kernels.use_backend("cython"):
        b = kernels.interp_cubic(arr, 0.0, 0.0, 0.1, 0.1, pts)
    assert np.allclose(a, b, rtol=0, atol=1e-13)


def test_interp_reproduces_nodes_and_quadratics():
    x = np.arange(8) * 0.2
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    f = 1 + 2 * X1 - X2 + 0.5 * X1 * X2
    pts = np.stack([X1[2:6, 2:6].ravel(), X2[2:6, 2:6].ravel()], axis=-1)
    assert np.allclose(kernels.interp_cubic(f, 0.0, 0.0, 0.2, 0.2, pts), f[2:6, 2:6].ravel())
    # cubic convolution with a = -1/2 is exact for quadratics away from the edge
    q = X1**2 + X2
    p = np.array([[0.55, 0.71], [0.83, 0.47]])
    assert np.allclose(kernels.interp_cubic(q, 0.0, 0.0, 0.2, 0.2, p), p[:, 0] ** 2 + p[:, 1])


@needs_cython
def test_solver_parity():
    g = square_grid(24)
    P = from_bumps(g, [Bump("A0", (0.0, 0.0), 0.3, 0.4), Bump("A", (0.05, 0.0), 0.3, (0.2, -0.1)),
                       Bump("Phi", (0.0, 0.05), 0.3, 1.0)])
    t = g.times[:, None, None]
    nb = g.cross_section.n_boundary
    s = np.clip(t / 0.3, 0, 1)
    f = BoundaryTrace(g, (s**3 * np.exp(4j * t)) * np.ones((1, 1, nb)))
    with kernels.use_backend("python"):
        a = solve_ibvp(P, f).final
    with kernels.use_backend("cython"):
        b = solve_ibvp(P, f).final
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()
