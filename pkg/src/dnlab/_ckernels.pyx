# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_kernels_py`` for the reference."""

import numpy as np
from libc.math cimport floor


def leapfrog_step(double complex[::1] u_next, const double complex[::1] u_cur,
                  const double complex[::1] u_prev,
                  const Py_ssize_t[::1] idx, const Py_ssize_t[::1] ip, const Py_ssize_t[::1] im,
                  const Py_ssize_t[::1] jp, const Py_ssize_t[::1] jm,
                  const Py_ssize_t[::1] kp, const Py_ssize_t[::1] km,
                  const double[::1] a0, const double[::1] a1, const double[::1] a2,
                  const double[::1] V, const double[::1] divA,
                  double dt, double dx, double dy, double dz, bint axial,
                  const double complex[::1] src, bint has_src):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t m, p
    cdef double ix2 = 1.0 / (dx * dx)
    cdef double iy2 = 1.0 / (dy * dy)
    cdef double iz2 = 1.0 / (dz * dz)
    cdef double hx = 0.5 / dx
    cdef double hy = 0.5 / dy
    cdef double dt2 = dt * dt
    cdef double complex uc, up_, um_, vp_, vm_, lap, g1, g2, rhs
    cdef double complex I = 1j
    cdef double ad
    with nogil:
        for m in range(n):
            p = idx[m]
            uc = u_cur[p]
            up_ = u_cur[ip[m]]
            um_ = u_cur[im[m]]
            vp_ = u_cur[jp[m]]
            vm_ = u_cur[jm[m]]
            lap = (up_ - 2.0 * uc + um_) * ix2 + (vp_ - 2.0 * uc + vm_) * iy2
            if axial:
                lap = lap + (u_cur[kp[m]] - 2.0 * uc + u_cur[km[m]]) * iz2
            g1 = (up_ - um_) * hx
            g2 = (vp_ - vm_) * hy
            rhs = lap + I * (2.0 * (a1[m] * g1 + a2[m] * g2) + divA[m] * uc) - V[m] * uc
            if has_src:
                rhs = rhs + src[m]
            ad = a0[m] * dt
            u_next[p] = (2.0 * uc - (1.0 - ad) * u_prev[p] + dt2 * rhs) / (1.0 + ad)


cdef inline void _keys(double t, double* w) noexcept nogil:
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    w[0] = -0.5 * t3 + t2 - 0.5 * t
    w[1] = 1.5 * t3 - 2.5 * t2 + 1.0
    w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w[3] = 0.5 * t3 - 0.5 * t2


def _interp_complex(const double complex[:, ::1] arr, double x0, double y0, double dx,
                    double dy, const double[:, ::1] p):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t n1 = arr.shape[0]
    cdef Py_ssize_t n2 = arr.shape[1]
    out_np = np.zeros(n, dtype=np.complex128)
    cdef double complex[::1] out = out_np
    cdef Py_ssize_t m, a, b, ii, jj, ix, iy
    cdef double fx, fy
    cdef double wx[4]
    cdef double wy[4]
    cdef double complex acc
    with nogil:
        for m in range(n):
            fx = (p[m, 0] - x0) / dx
            fy = (p[m, 1] - y0) / dy
            ix = <Py_ssize_t> floor(fx)
            iy = <Py_ssize_t> floor(fy)
            if ix < -2 or iy < -2 or ix > n1 or iy > n2:
                continue
            _keys(fx - ix, wx)
            _keys(fy - iy, wy)
            acc = 0.0
            for a in range(4):
                ii = ix + a - 1
                if ii < 0 or ii >= n1:
                    continue
                for b in range(4):
                    jj = iy + b - 1
                    if jj < 0 or jj >= n2:
                        continue
                    acc = acc + arr[ii, jj] * (wx[a] * wy[b])
            out[m] = acc
    return out_np


def interp_cubic(arr, double x0, double y0, double dx, double dy, pts):
    a = np.asarray(arr)
    pts = np.asarray(pts, dtype=float)
    shp = pts.shape[:-1]
    p = np.ascontiguousarray(pts.reshape(-1, 2))
    res = _interp_complex(np.ascontiguousarray(a, dtype=np.complex128), x0, y0, dx, dy, p)
    if not np.iscomplexobj(a):
        res = res.real.copy()
    return res.reshape(shp)
