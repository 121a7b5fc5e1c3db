# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric hot kernels.

Mirrors rdecomp._kernels._py_kernels. The wins over numpy come from fusing
elementwise chains into single passes, loop-based scans (GAE), and skipping
dispatch overhead on the small matrices this package mostly works with.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()


def matmul(a, b):
    # BLAS through numpy beats a handwritten loop even at 16x32 sizes
    # (measured in benchmarks/bench_kernels.py), so no custom kernel here.
    return np.dot(a, b)


def tanh_vjp(y, g):
    shape = np.asarray(y).shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yf = np.ascontiguousarray(y).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gf = np.ascontiguousarray(g).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(yf.shape[0], dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(yf.shape[0]):
        out[i] = gf[i] * (1.0 - yf[i] * yf[i])
    return out.reshape(shape)


def sigmoid_vjp(y, g):
    shape = np.asarray(y).shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yf = np.ascontiguousarray(y).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gf = np.ascontiguousarray(g).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(yf.shape[0], dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(yf.shape[0]):
        out[i] = gf[i] * yf[i] * (1.0 - yf[i])
    return out.reshape(shape)


def softmax_rows(x, bint causal=False):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xm = np.ascontiguousarray(x)
    cdef Py_ssize_t n = xm.shape[0], m = xm.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j, lim
    cdef double mx, s
    for i in range(n):
        lim = i + 1 if causal and i + 1 < m else m
        mx = -INFINITY
        for j in range(lim):
            if xm[i, j] > mx:
                mx = xm[i, j]
        s = 0.0
        for j in range(lim):
            out[i, j] = exp(xm[i, j] - mx)
            s += out[i, j]
        for j in range(lim):
            out[i, j] /= s
    return out


def softmax_rows_vjp(p, g):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pm = np.ascontiguousarray(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gm = np.ascontiguousarray(g)
    cdef Py_ssize_t n = pm.shape[0], m = pm.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += gm[i, j] * pm[i, j]
        for j in range(m):
            out[i, j] = pm[i, j] * (gm[i, j] - dot)
    return out


def layer_norm_rows(x, gain, bias, double eps):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xm = np.ascontiguousarray(x)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gv = np.ascontiguousarray(gain).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bv = np.ascontiguousarray(bias).reshape(-1)
    cdef Py_ssize_t n = xm.shape[0], m = xm.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((n, m), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xhat = np.empty((n, m), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] inv_std = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double mean, var, c, isd
    for i in range(n):
        mean = 0.0
        for j in range(m):
            mean += xm[i, j]
        mean /= m
        var = 0.0
        for j in range(m):
            c = xm[i, j] - mean
            var += c * c
        var /= m
        isd = 1.0 / sqrt(var + eps)
        inv_std[i] = isd
        for j in range(m):
            xhat[i, j] = (xm[i, j] - mean) * isd
            y[i, j] = xhat[i, j] * gv[j] + bv[j]
    return y, xhat, inv_std


def layer_norm_rows_vjp(xhat, inv_std, gain, g):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xh = np.ascontiguousarray(xhat)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] isd = np.ascontiguousarray(inv_std)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gv = np.ascontiguousarray(gain).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gm = np.ascontiguousarray(g)
    cdef Py_ssize_t n = xh.shape[0], m = xh.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dx = np.empty((n, m), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dgain = np.zeros(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dbias = np.zeros(m, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double mean_gg, mean_ggx, gg
    for i in range(n):
        mean_gg = 0.0
        mean_ggx = 0.0
        for j in range(m):
            gg = gm[i, j] * gv[j]
            mean_gg += gg
            mean_ggx += gg * xh[i, j]
            dgain[j] += gm[i, j] * xh[i, j]
            dbias[j] += gm[i, j]
        mean_gg /= m
        mean_ggx /= m
        for j in range(m):
            gg = gm[i, j] * gv[j]
            dx[i, j] = (gg - mean_gg - xh[i, j] * mean_ggx) * isd[i]
    return dx, dgain, dbias


def gae(rewards, values, double gamma, double lam):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.ascontiguousarray(rewards)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(values)
    cdef Py_ssize_t t_len = r.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] adv = np.empty(t_len, dtype=np.float64)
    cdef double acc = 0.0
    cdef Py_ssize_t t
    for t in range(t_len - 1, -1, -1):
        acc = r[t] + gamma * v[t + 1] - v[t] + gamma * lam * acc
        adv[t] = acc
    return adv
