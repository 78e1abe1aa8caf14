# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled addressing and KL kernels; same contract as ``_kernels_py``."""
import numpy as np
from libc.math cimport exp, log, sqrt


cdef inline double _fmax(double a, double b) nogil:
    return a if a > b else b


def address_forward(const double[:, ::1] q, const double[:, ::1] mem,
                    double r, double eps):
    cdef Py_ssize_t m = q.shape[0], d = q.shape[1], n = mem.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc, top, total, qn, z
    # the dense product goes through BLAS; everything after it is one fused pass
    cos_arr = np.dot(np.asarray(q), np.asarray(mem).T)
    w_arr = np.empty((m, n))
    qnorm_arr = np.empty(m)
    mnorm_arr = np.empty(n)
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] cos = cos_arr
    cdef double[::1] qnorm = qnorm_arr
    cdef double[::1] mnorm = mnorm_arr
    with nogil:
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc = acc + mem[j, k] * mem[j, k]
            mnorm[j] = sqrt(acc)
        for i in range(m):
            acc = 0.0
            for k in range(d):
                acc = acc + q[i, k] * q[i, k]
            qnorm[i] = sqrt(acc)
            qn = _fmax(qnorm[i], eps)
            top = -1e300
            for j in range(n):
                cos[i, j] = cos[i, j] / qn / _fmax(mnorm[j], eps)
                z = r * cos[i, j]
                if z > top:
                    top = z
            total = 0.0
            for j in range(n):
                w[i, j] = exp(r * cos[i, j] - top)
                total = total + w[i, j]
            for j in range(n):
                w[i, j] = w[i, j] / total
    return w_arr, cos_arr, qnorm_arr, mnorm_arr


def address_backward(const double[:, ::1] g, const double[:, ::1] w,
                     const double[:, ::1] cos, const double[:, ::1] q,
                     const double[:, ::1] mem, const double[::1] qnorm,
                     const double[::1] mnorm, double r, double eps):
    cdef Py_ssize_t m = q.shape[0], d = q.shape[1], n = mem.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double gw, ds, qn, scale
    coef_arr = np.empty((m, n))
    rowsum_arr = np.zeros(m)
    colsum_arr = np.zeros(n)
    cdef double[:, ::1] coef = coef_arr
    cdef double[::1] rowsum = rowsum_arr
    cdef double[::1] colsum = colsum_arr
    with nogil:
        for i in range(m):
            qn = _fmax(qnorm[i], eps)
            gw = 0.0
            for j in range(n):
                gw = gw + g[i, j] * w[i, j]
            for j in range(n):
                ds = r * w[i, j] * (g[i, j] - gw)
                coef[i, j] = ds / qn / _fmax(mnorm[j], eps)
                rowsum[i] = rowsum[i] + ds * cos[i, j]
                colsum[j] = colsum[j] + ds * cos[i, j]
    dq_arr = np.dot(coef_arr, np.asarray(mem))
    dmem_arr = np.dot(coef_arr.T, np.asarray(q))
    cdef double[:, ::1] dq = dq_arr
    cdef double[:, ::1] dmem = dmem_arr
    with nogil:
        for i in range(m):
            if qnorm[i] > eps:
                scale = rowsum[i] / (qnorm[i] * qnorm[i])
                for k in range(d):
                    dq[i, k] = dq[i, k] - scale * q[i, k]
        for j in range(n):
            if mnorm[j] > eps:
                scale = colsum[j] / (mnorm[j] * mnorm[j])
                for k in range(d):
                    dmem[j, k] = dmem[j, k] - scale * mem[j, k]
    return dq_arr, dmem_arr


def kl_forward(const double[:, ::1] p, const double[:, ::1] q, double eps):
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    out_arr = np.empty(m)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(n):
                if p[i, j] > 0:
                    acc = acc + p[i, j] * log(p[i, j] / _fmax(q[i, j], eps))
            out[i] = acc
    return out_arr


def kl_backward(const double[::1] g, const double[:, ::1] p,
                const double[:, ::1] q, double eps):
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1]
    cdef Py_ssize_t i, j
    cdef double qc
    dp_arr = np.zeros((m, n))
    dq_arr = np.zeros((m, n))
    cdef double[:, ::1] dp = dp_arr
    cdef double[:, ::1] dq = dq_arr
    with nogil:
        for i in range(m):
            for j in range(n):
                qc = _fmax(q[i, j], eps)
                if p[i, j] > 0:
                    dp[i, j] = (log(p[i, j] / qc) + 1.0) * g[i]
                if q[i, j] > eps:
                    dq[i, j] = -p[i, j] / qc * g[i]
    return dp_arr, dq_arr
