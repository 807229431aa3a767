import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dnlab.domain import build_cross_section, diam, make_grid

settings.register_profile(
    "dnlab", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("dnlab")


def square_grid(n, T_factor=1.5, side=1.0):
    cs = build_cross_section({"kind": "rectangle", "width": side, "height": side}, n)
    return make_grid(cs, T_factor * diam(cs))


@pytest.fixture(scope="session")
def g32():
    return square_grid(32)


@pytest.fixture(scope="session")
def g64():
    return square_grid(64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record their verdicts here; the summary prints one line each
ACCEPTANCE = {}


def record(cid, ok, detail=""):
    # a criterion passes only if every part of it passes
    print(f"{cid} {'PASS' if ok else 'FAIL'}: {detail}")
    prev = ACCEPTANCE.get(cid)
    details = [d for d in ((prev[1] if prev else ""), detail) if d]
    ACCEPTANCE[cid] = (bool(ok) and (prev is None or prev[0]), "; ".join(details))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
