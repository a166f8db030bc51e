# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""

import numpy as np
from libc.math cimport exp, log, log1p, M_PI

cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)


def pairwise_gauss_logpdf(const double[:, ::1] z, const double[:, ::1] mean,
                          const double[:, ::1] sigma):
    cdef Py_ssize_t B = z.shape[0], K = mean.shape[0], D = z.shape[1]
    cdef Py_ssize_t b, k, d
    cdef double acc, diff
    out_arr = np.empty((B, K), dtype=np.float64)
    inv_arr = np.empty((K, D), dtype=np.float64)
    const_arr = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] inv = inv_arr
    cdef double[::1] cst = const_arr
    for k in range(K):
        acc = -D * HALF_LOG_2PI
        for d in range(D):
            inv[k, d] = 1.0 / sigma[k, d]
            acc -= log(sigma[k, d])
        cst[k] = acc
    for b in range(B):
        for k in range(K):
            acc = 0.0
            for d in range(D):
                diff = (z[b, d] - mean[k, d]) * inv[k, d]
                acc += diff * diff
            out[b, k] = cst[k] - 0.5 * acc
    return out_arr


def pairwise_gauss_logpdf_grad(const double[:, ::1] z, const double[:, ::1] mean,
                               const double[:, ::1] sigma, const double[:, ::1] g):
    cdef Py_ssize_t B = z.shape[0], K = mean.shape[0], D = z.shape[1]
    cdef Py_ssize_t b, k, d
    cdef double gbk, delta, s, inv
    gz_arr = np.zeros((B, D), dtype=np.float64)
    gm_arr = np.zeros((K, D), dtype=np.float64)
    gs_arr = np.zeros((K, D), dtype=np.float64)
    cdef double[:, ::1] gz = gz_arr
    cdef double[:, ::1] gm = gm_arr
    cdef double[:, ::1] gs = gs_arr
    for b in range(B):
        for k in range(K):
            gbk = g[b, k]
            if gbk == 0.0:
                continue
            for d in range(D):
                inv = 1.0 / sigma[k, d]
                delta = (z[b, d] - mean[k, d]) * inv * inv
                s = gbk * delta
                gz[b, d] -= s
                gm[k, d] += s
                gs[k, d] += gbk * ((z[b, d] - mean[k, d]) * delta - 1.0) * inv
    return gz_arr, gm_arr, gs_arr


def rbf_gram(const double[:, ::1] a, const double[:, ::1] b, double gamma):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], D = a.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double acc, diff
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for d in range(D):
                diff = a[i, d] - b[j, d]
                acc += diff * diff
            out[i, j] = exp(-acc / gamma)
    return out_arr


def rbf_gram_grad(const double[:, ::1] a, const double[:, ::1] b, double gamma,
                  const double[:, ::1] kmat, const double[:, ::1] g):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], D = a.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double w, diff
    ga_arr = np.zeros((n, D), dtype=np.float64)
    gb_arr = np.zeros((m, D), dtype=np.float64)
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    for i in range(n):
        for j in range(m):
            w = g[i, j] * kmat[i, j] * (-2.0 / gamma)
            if w == 0.0:
                continue
            for d in range(D):
                diff = a[i, d] - b[j, d]
                ga[i, d] += w * diff
                gb[j, d] -= w * diff
    return ga_arr, gb_arr


def softplus_sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] v = arr.reshape(-1)
    cdef Py_ssize_t n = v.shape[0], i
    sp_arr = np.empty(n, dtype=np.float64)
    sig_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] sp = sp_arr
    cdef double[::1] sig = sig_arr
    cdef double xi, e
    for i in range(n):
        xi = v[i]
        if xi >= 0:
            e = exp(-xi)
            sp[i] = xi + log1p(e)
            sig[i] = 1.0 / (1.0 + e)
        else:
            e = exp(xi)
            sp[i] = log1p(e)
            sig[i] = e / (1.0 + e)
    return sp_arr.reshape(arr.shape), sig_arr.reshape(arr.shape)
