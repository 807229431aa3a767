"""Pure-numpy reference implementations of the hot kernels.

The compiled module ``_ckernels`` exposes the same functions with the same
signatures; ``kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np


def leapfrog_step(u_next, u_cur, u_prev, idx, ip, im, jp, jm, kp, km,
                  a0, a1, a2, V, divA, dt, dx, dy, dz, axial, src, has_src):
    """Advance the interior nodes ``idx`` by one leapfrog step (in place)."""
    uc = u_cur[idx]
    up_ = u_cur[ip]
    um_ = u_cur[im]
    vp_ = u_cur[jp]
    vm_ = u_cur[jm]
    lap = (up_ - 2.0 * uc + um_) / (dx * dx) + (vp_ - 2.0 * uc + vm_) / (dy * dy)
    if axial:
        lap += (u_cur[kp] - 2.0 * uc + u_cur[km]) / (dz * dz)
    g1 = (up_ - um_) / (2.0 * dx)
    g2 = (vp_ - vm_) / (2.0 * dy)
    rhs = lap + 1j * (2.0 * (a1 * g1 + a2 * g2) + divA * uc) - V * uc
    if has_src:
        rhs += src
    ad = a0 * dt
    u_next[idx] = (2.0 * uc - (1.0 - ad) * u_prev[idx] + dt * dt * rhs) / (1.0 + ad)


def _keys(t):
    # cubic convolution weights (a = -1/2) for offsets t-1, t, 1-t, 2-t
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


def interp_cubic(arr, x0, y0, dx, dy, pts):
    """Cubic-convolution interpolation of a 2-D lattice array, zero outside it.

    ``arr`` is real or complex with node (i, j) at ``(x0 + i dx, y0 + j dy)``;
    ``pts`` has shape (..., 2).
    """
    arr = np.asarray(arr)
    pts = np.asarray(pts, dtype=float)
    shp = pts.shape[:-1]
    p = pts.reshape(-1, 2)
    fx = (p[:, 0] - x0) / dx
    fy = (p[:, 1] - y0) / dy
    ix = np.floor(fx).astype(np.intp)
    iy = np.floor(fy).astype(np.intp)
    wx = _keys(fx - ix)
    wy = _keys(fy - iy)
    n1, n2 = arr.shape
    out = np.zeros(p.shape[0], dtype=np.result_type(arr.dtype, float))
    for a in range(4):
        ii = ix + a - 1
        okx = (ii >= 0) & (ii < n1)
        iic = np.clip(ii, 0, n1 - 1)
        for b in range(4):
            jj = iy + b - 1
            ok = okx & (jj >= 0) & (jj < n2)
            jjc = np.clip(jj, 0, n2 - 1)
            out += np.where(ok, arr[iic, jjc], 0.0) * (wx[a] * wy[b])
    return out.reshape(shp)
