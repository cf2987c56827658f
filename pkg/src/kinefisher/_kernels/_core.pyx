# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused single-pass reductions over the sphere grid.

Mirrors numpy_backend's signatures. The win over numpy comes from fusing
the exponent, the exp, and up to ten weighted reductions into one pass,
instead of a dozen array-sized temporaries.
"""

from libc.math cimport exp, log

NAME = "compiled"


def bingham_logsum(double a1, double a2, double a3, double a4,
                   double[::1] x1sq, double[::1] x2sq,
                   double[::1] x3sq, double[::1] x4sq,
                   double[::1] w):
    """See numpy_backend.bingham_logsum; coefficients pre-shifted >= 0."""
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double acc = 0.0
    for i in range(n):
        acc += w[i] * exp(-(a1 * x1sq[i] + a2 * x2sq[i] + a3 * x3sq[i] + a4 * x4sq[i]))
    return acc


def bingham_moments(double a1, double a2, double a3, double a4,
                    double[::1] x1sq, double[::1] x2sq,
                    double[::1] x3sq, double[::1] x4sq,
                    double[::1] w):
    """See numpy_backend.bingham_moments."""
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double e, u2, u3, u4
    cdef double i0 = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0
    cdef double p22 = 0.0, p33 = 0.0, p44 = 0.0
    cdef double p23 = 0.0, p24 = 0.0, p34 = 0.0
    for i in range(n):
        u2 = x2sq[i]
        u3 = x3sq[i]
        u4 = x4sq[i]
        e = w[i] * exp(-(a1 * x1sq[i] + a2 * u2 + a3 * u3 + a4 * u4))
        i0 += e
        m2 += e * u2
        m3 += e * u3
        m4 += e * u4
        p22 += e * u2 * u2
        p33 += e * u3 * u3
        p44 += e * u4 * u4
        p23 += e * u2 * u3
        p24 += e * u2 * u4
        p34 += e * u3 * u4
    return (i0, m2, m3, m4, p22, p33, p44, p23, p24, p34)


def envelope_max_log_ratio(double a2, double a3, double a4,
                           double b, double log_m,
                           double[:, ::1] x):
    """See numpy_backend.envelope_max_log_ratio; x is (n, 4) unit rows."""
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double t, val, best = -1e300
    cdef double inv_b2 = 2.0 / b
    for i in range(n):
        t = a2 * x[i, 1] * x[i, 1] + a3 * x[i, 2] * x[i, 2] + a4 * x[i, 3] * x[i, 3]
        val = -t + 2.0 * log(1.0 + inv_b2 * t) - log_m
        if val > best:
            best = val
    return best
