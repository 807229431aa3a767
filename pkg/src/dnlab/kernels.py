"""Kernel dispatch: the compiled extension when it imports, numpy otherwise.

Set ``DNLAB_KERNELS=python`` to force the reference implementation.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _kernels_py

_forced = os.environ.get("DNLAB_KERNELS", "").strip().lower()
_impl = _kernels_py
BACKEND = "python"
if _forced != "python":
    try:
        from . import _ckernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None
        if _forced == "cython":
            raise
    else:
        _impl = _compiled
        BACKEND = "cython"
else:
    _compiled = None


def leapfrog_step(*args):
    return _impl.leapfrog_step(*args)


def interp_cubic(arr, x0, y0, dx, dy, pts):
    return _impl.interp_cubic(arr, x0, y0, dx, dy, pts)


def available_backends() -> list[str]:
    out = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        pass
    else:
        out.append("cython")
    return out


@contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel implementation (for tests and benchmarks)."""
    global _impl, BACKEND
    old = (_impl, BACKEND)
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from . import _ckernels

        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
    try:
        yield
    finally:
        _impl, BACKEND = old
