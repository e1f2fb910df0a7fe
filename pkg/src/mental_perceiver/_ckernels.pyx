# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the row-fused kernels in ``_kernels_py``.

Same signatures, same memory layout. Each loop makes one or two passes per
row instead of materialising numpy temporaries. Only kernels that beat
numpy live here: GELU, forward softmax and attention stay on numpy's SIMD
transcendentals and BLAS (see ``benchmarks/bench_kernels.py``).
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


def layer_norm_fwd(floating[:, ::1] x, floating[:, ::1] gain, floating[:, ::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, d), dtype=dtype)
    xhat_arr = np.empty((n, d), dtype=dtype)
    rstd_arr = np.empty(n, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    cdef double mean, var, r, c
    for i in range(n):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            c = (x[i, j] - mean) * r
            xhat[i, j] = c
            y[i, j] = c * gain[0, j] + bias[0, j]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_bwd(floating[:, ::1] dy, floating[:, ::1] xhat, floating[::1] rstd, floating[:, ::1] gain):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    dg_arr = np.zeros((1, d), dtype=np.float64)
    db_arr = np.zeros((1, d), dtype=np.float64)
    cdef floating[:, ::1] dx = dx_arr
    cdef double[:, ::1] dg = dg_arr
    cdef double[:, ::1] db = db_arr
    cdef double m1, m2, t
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            t = dy[i, j] * gain[0, j]
            m1 += t
            m2 += t * xhat[i, j]
            dg[0, j] += dy[i, j] * xhat[i, j]
            db[0, j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dx[i, j] = (dy[i, j] * gain[0, j] - m1 - xhat[i, j] * m2) * rstd[i]
    return dx_arr, dg_arr.astype(dtype), db_arr.astype(dtype)


def softmax_rows_bwd(floating[:, ::1] y, floating[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += dy[i, j] * y[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - s)
    return dx_arr


def adamw_update(floating[::1] w, floating[::1] g, floating[::1] m, floating[::1] v,
                 double lr, double beta1, double beta2, double eps, double wd,
                 double bc1, double bc2):
    cdef Py_ssize_t n = w.shape[0], i
    cdef floating decay = 1.0 - lr * wd
    cdef floating b1 = beta1, b2 = beta2, c1 = 1.0 - beta1, c2 = 1.0 - beta2
    cdef floating step = lr / bc1, inv_sqrt_bc2 = 1.0 / sqrt(bc2), e = eps
    cdef floating gi, mi, vi
    cdef floating* wp = &w[0]
    cdef floating* gp = &g[0]
    cdef floating* mp = &m[0]
    cdef floating* vp = &v[0]
    if n == 0:
        return
    for i in range(n):
        gi = gp[i]
        mi = b1 * mp[i] + c1 * gi
        vi = b2 * vp[i] + c2 * gi * gi
        mp[i] = mi
        vp[i] = vi
        wp[i] = wp[i] * decay - step * mi / (sqrt(vi) * inv_sqrt_bc2 + e)
