# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the pulse superposition and lag-sum loops."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, sqrt, M_PI

cdef double GAUSS_HALF_WIDTH = 8.0


def superpose_rect(const double[::1] times, const double[::1] charges,
                   double dt, double tau_p, Py_ssize_t n):
    cdef Py_ssize_t k, j0, j1, j
    cdef double h, acc
    steps = np.zeros(n + 1)
    cdef double[::1] st = steps
    for k in range(times.shape[0]):
        j0 = <Py_ssize_t>ceil(times[k] / dt)
        if j0 >= n:
            continue
        j1 = <Py_ssize_t>ceil((times[k] + tau_p) / dt)
        if j1 > n:
            j1 = n
        h = charges[k] / tau_p
        st[j0] += h
        st[j1] -= h
    out = np.empty(n)
    cdef double[::1] o = out
    acc = 0.0
    for j in range(n):
        acc = acc + st[j]
        o[j] = acc
    return out


def superpose_exp(const double[::1] times, const double[::1] charges,
                  double dt, double tau_p, Py_ssize_t n):
    cdef Py_ssize_t k, j0, j
    cdef double r, acc
    out = np.zeros(n)
    cdef double[::1] o = out
    for k in range(times.shape[0]):
        j0 = <Py_ssize_t>ceil(times[k] / dt)
        if j0 >= n:
            continue
        o[j0] += charges[k] / tau_p * exp(-(j0 * dt - times[k]) / tau_p)
    r = exp(-dt / tau_p)
    acc = 0.0
    for j in range(n):
        acc = acc * r + o[j]
        o[j] = acc
    return out


def superpose_gauss(const double[::1] times, const double[::1] charges,
                    double dt, double tau_p, Py_ssize_t n):
    cdef Py_ssize_t k, j, first, last
    cdef double t, q, s, norm, half
    out = np.zeros(n)
    cdef double[::1] o = out
    norm = 1.0 / (sqrt(2.0 * M_PI) * tau_p)
    half = GAUSS_HALF_WIDTH * tau_p
    for k in range(times.shape[0]):
        t = times[k]
        q = charges[k] * norm
        first = <Py_ssize_t>ceil((t - half) / dt)
        if first < 0:
            first = 0
        last = <Py_ssize_t>ceil((t + half) / dt) + 1
        if last > n:
            last = n
        for j in range(first, last):
            s = (j * dt - t) / tau_p
            if fabs(s) <= GAUSS_HALF_WIDTH:
                o[j] += q * exp(-0.5 * s * s)
    return out


def lagged_block_sums(const double[::1] x, const double[::1] y,
                      Py_ssize_t max_lag, const cnp.int64_t[::1] edges):
    # Inner loop runs over lags so it has no reduction dependency.
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nb = edges.shape[0] - 1
    cdef Py_ssize_t nl = 2 * max_lag + 1
    cdef Py_ssize_t b, li, lo, hi, j, m, j0, j1
    cdef double xj
    cdef const double* yp
    sums = np.zeros((nb, nl))
    counts = np.zeros((nb, nl), dtype=np.int64)
    cdef double[:, ::1] S = sums
    cdef cnp.int64_t[:, ::1] C = counts
    cdef double* acc
    for b in range(nb):
        acc = &S[b, 0]
        for j in range(edges[b], edges[b + 1]):
            xj = x[j]
            # valid lags: 0 <= j + m < n
            lo = max_lag - j if j < max_lag else 0
            hi = max_lag + n - j if n - j <= max_lag else nl
            yp = &y[j - max_lag + lo]
            for li in range(lo, hi):
                acc[li] += xj * yp[li - lo]
        for li in range(nl):
            m = li - max_lag
            j0 = edges[b] if edges[b] > -m else -m
            j1 = edges[b + 1] if edges[b + 1] < n - m else n - m
            if j1 > j0:
                C[b, li] = j1 - j0
    return sums, counts
