# cython: boundscheck=False, wraparound=False, cdivision=False
"""Compiled kernels, mirroring _pykern function by function.

Loops are written against typed memoryviews to skip numpy dispatch overhead
on the small flat arrays the samplers use.  cdivision stays OFF and the
module is built without -ffast-math: the inversion guarantees depend on
strict IEEE-754 rounding, so the arithmetic here must match the pure-python
backend operation for operation.
"""

from libc.math cimport exp, isfinite, log, sqrt

import numpy as np

NAME = "compiled"


def axpby(double a, const double[::1] x, double b, const double[::1] e):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = a * x[i] + b * e[i]
    return out_arr


def inv_axpby(double a, const double[::1] z, double b, const double[::1] e):
    cdef Py_ssize_t i, n = z.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = (z[i] - b * e[i]) / a
    return out_arr


def mix(double p, const double[::1] x, const double[::1] y):
    # Same x + (1-p)*(y-x) form as the python backend: x == y stays bitwise.
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double q = 1.0 - p
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = x[i] + q * (y[i] - x[i])
    return out_arr


def unmix(double p, const double[::1] xm, const double[::1] y):
    cdef Py_ssize_t i, n = xm.shape[0]
    cdef double q = 1.0 - p
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = (xm[i] - q * y[i]) / p
    return out_arr


def gauss_mixture_eps(const double[::1] x, const double[:, ::1] means, const double[::1] variances,
                      const double[::1] log_weights, double abar, long label):
    cdef Py_ssize_t i, k
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t ncomp = means.shape[0]
    cdef double sa = sqrt(abar)
    cdef double s1a = sqrt(1.0 - abar)
    cdef double pv, d, d2, top, rsum, scale

    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr

    if label >= 0:
        pv = abar * variances[label] + (1.0 - abar)
        scale = s1a / pv
        for i in range(n):
            out[i] = scale * (x[i] - sa * means[label, i])
        return out_arr

    logits_arr = np.empty(ncomp, dtype=np.float64)
    cdef double[::1] logits = logits_arr
    resp_arr = np.empty(ncomp, dtype=np.float64)
    cdef double[::1] resp = resp_arr

    top = -np.inf
    for k in range(ncomp):
        pv = abar * variances[k] + (1.0 - abar)
        d2 = 0.0
        for i in range(n):
            d = x[i] - sa * means[k, i]
            d2 += d * d
        logits[k] = log_weights[k] - 0.5 * n * log(pv) - d2 / (2.0 * pv)
        if logits[k] > top:
            top = logits[k]

    if isfinite(top):
        rsum = 0.0
        for k in range(ncomp):
            resp[k] = exp(logits[k] - top)
            rsum += resp[k]
    else:
        # Same prior-weight fallback as the python backend for degenerate
        # states, so divergence runs behave the same under either backend.
        top = log_weights[0]
        for k in range(1, ncomp):
            if log_weights[k] > top:
                top = log_weights[k]
        rsum = 0.0
        for k in range(ncomp):
            resp[k] = exp(log_weights[k] - top)
            rsum += resp[k]

    for i in range(n):
        out[i] = 0.0
    for k in range(ncomp):
        pv = abar * variances[k] + (1.0 - abar)
        scale = s1a * resp[k] / (rsum * pv)
        for i in range(n):
            out[i] += scale * (x[i] - sa * means[k, i])
    return out_arr
