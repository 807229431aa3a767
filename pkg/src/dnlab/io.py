"""Flat binary field format, CSV tables and line-delimited log records.

Binary layout (all little-endian)::

    magic      8 bytes  b"DNLABF01"
    ndim       uint32
    nfields    uint32
    complex    uint32   1 if every field carries a real and an imaginary block
    meta_len   uint32
    dims       ndim x uint64
    spacings   ndim x float64
    meta       meta_len bytes of UTF-8 JSON (field names, seed, grid, ...)
    data       nfields x (re[, im]) float64 arrays, row-major

A trace is stored with dims ``(nt+1, n_axial, n_boundary)`` and spacings
``(dt, dz, mean arc step)``; a potential as four fields A0, A1, A2, Phi of
shape ``grid.shape``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "MAGIC",
    "write_fields",
    "read_fields",
    "write_trace",
    "read_trace",
    "write_potential",
    "read_potential_arrays",
    "write_csv",
    "read_csv",
    "energy_csv_rows",
    "trace_csv_rows",
    "JsonLog",
    "stable_hash",
]

MAGIC = b"DNLABF01"
_HEAD = struct.Struct("<8sIIII")


def stable_hash(obj) -> str:
    """sha256 of the canonical JSON dump (sorted keys)."""
    s = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(s.encode()).hexdigest()


def write_fields(path, fields: dict, spacings, meta: dict | None = None) -> Path:
    """Write same-shaped arrays under one header."""
    if not fields:
        raise ValidationError("no fields to write")
    arrs = [np.asarray(a) for a in fields.values()]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValidationError("all fields must share one shape")
    spacings = [float(s) for s in spacings]
    if len(spacings) != len(shape):
        raise ValidationError(f"{len(spacings)} spacings for {len(shape)} dims")
    cplx = any(np.iscomplexobj(a) for a in arrs)
    meta = dict(meta or {}, names=list(fields))
    mb = json.dumps(meta, sort_keys=True, default=str).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, len(shape), len(arrs), int(cplx), len(mb)))
        fh.write(np.asarray(shape, dtype="<u8").tobytes())
        fh.write(np.asarray(spacings, dtype="<f8").tobytes())
        fh.write(mb)
        for a in arrs:
            fh.write(np.ascontiguousarray(a.real, dtype="<f8").tobytes())
            if cplx:
                fh.write(np.ascontiguousarray(a.imag, dtype="<f8").tobytes())
    return path


def read_fields(path) -> tuple[dict, tuple, dict]:
    """Inverse of write_fields: ``(fields, spacings, meta)``."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEAD.size:
        raise ValidationError(f"{path}: truncated header")
    magic, ndim, nf, cplx, ml = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    off = _HEAD.size
    shape = tuple(int(v) for v in np.frombuffer(buf, "<u8", ndim, off))
    off += 8 * ndim
    sp = tuple(float(v) for v in np.frombuffer(buf, "<f8", ndim, off))
    off += 8 * ndim
    meta = json.loads(buf[off:off + ml].decode())
    off += ml
    n = int(np.prod(shape)) if shape else 1
    want = off + nf * n * 8 * (2 if cplx else 1)
    if len(buf) != want:
        raise ValidationError(f"{path}: size {len(buf)} does not match header ({want})")
    out = {}
    for name in meta.get("names", [f"f{i}" for i in range(nf)]):
        a = np.frombuffer(buf, "<f8", n, off).reshape(shape).astype(float)
        off += 8 * n
        if cplx:
            a = a + 1j * np.frombuffer(buf, "<f8", n, off).reshape(shape)
            off += 8 * n
        out[name] = a
    return out, sp, meta


def write_trace(path, trace, meta: dict | None = None) -> Path:
    g = trace.grid
    m = dict(trace.meta, **(meta or {}), kind=trace.kind, nt=g.nt, T=g.T)
    ds = g.cross_section.perimeter / g.cross_section.n_boundary
    return write_fields(path, {"trace": trace.samples}, (g.dt, g.dz, ds), m)


def read_trace(path, grid):
    """Load a trace onto ``grid``; the lattice shape must match."""
    from .traces import BoundaryTrace

    f, _, meta = read_fields(path)
    kind = meta.pop("kind", "dirichlet")
    meta.pop("names", None)
    return BoundaryTrace(grid, np.asarray(f["trace"], dtype=complex), kind, meta)


def write_potential(path, P, meta: dict | None = None) -> Path:
    g = P.grid
    fields = {"A0": P.A0, "A1": P.A[0], "A2": P.A[1], "Phi": P.Phi}
    return write_fields(path, fields, (g.dz, g.dx, g.dy), dict(meta or {}, mode=g.mode))


def read_potential_arrays(path) -> dict:
    return read_fields(path)[0]


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def energy_csv_rows(sol):
    """(step, time, kinetic, potential, total) per stored level."""
    e = sol.energy
    if e is None:
        raise ValidationError("solution has no energy series")
    dt = sol.grid.dt
    for n, t in enumerate(e.times):
        yield (int(round(t / dt)), float(t), float(e.kinetic[n]), float(e.potential[n]),
               float(e.total[n]))


def trace_csv_rows(trace):
    """(step, time, axial index, node, re, im) in row-major order."""
    g = trace.grid
    s = trace.samples
    for n in range(s.shape[0]):
        for k in range(s.shape[1]):
            for j in range(s.shape[2]):
                v = s[n, k, j]
                yield (n, n * g.dt, k, j, float(v.real), float(v.imag))


class JsonLog:
    """Append-only JSON-lines log; records carry a wall-clock stamp."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text("")

    def __call__(self, event: str, **fields) -> None:
        rec = {"t": round(time.time(), 3), "event": event, **fields}
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
