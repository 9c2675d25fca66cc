# cython: language_level=3
"""Compiled kernels for per-batch statistics work.

Mirrors ``_purepy`` function for function.  Inputs are float64 arrays; 2-D
inputs must be C-contiguous with channels along the first axis.
"""

import numpy as np

from libc.math cimport sqrt, floor


def batch_moments(const double[:, ::1] x):
    cdef Py_ssize_t F = x.shape[0], N = x.shape[1], f, n
    cdef double s, d, lo, hi
    mean = np.empty(F)
    var = np.empty(F)
    cdef double[::1] mv = mean, vv = var
    for f in range(F):
        s = 0.0
        lo = x[f, 0]
        hi = lo
        for n in range(N):
            s += x[f, n]
            if x[f, n] < lo:
                lo = x[f, n]
            elif x[f, n] > hi:
                hi = x[f, n]
        # a constant channel is exact: no rounding in the mean or variance
        if lo == hi:
            mv[f] = lo
            vv[f] = 0.0
            continue
        s = s / N
        mv[f] = s
        d = 0.0
        for n in range(N):
            d += (x[f, n] - s) * (x[f, n] - s)
        vv[f] = d / N
    return mean, var


def normalize(const double[:, ::1] x, const double[::1] mean, const double[::1] var,
              const double[::1] scale, const double[::1] shift, double eps):
    cdef Py_ssize_t F = x.shape[0], N = x.shape[1], f, n
    cdef double inv, mu, b
    out = np.empty((F, N))
    cdef double[:, ::1] ov = out
    for f in range(F):
        inv = scale[f] / sqrt(var[f] + eps)
        mu = mean[f]
        b = shift[f]
        for n in range(N):
            ov[f, n] = (x[f, n] - mu) * inv + b
    return out


def mix_moments(double alpha, const double[::1] mu_s, const double[::1] var_s,
                const double[::1] mu_t, const double[::1] var_t):
    cdef Py_ssize_t F = mu_s.shape[0], f
    cdef double beta = 1.0 - alpha, ab = alpha * beta, d
    mean = np.empty(F)
    var = np.empty(F)
    cdef double[::1] mv = mean, vv = var
    for f in range(F):
        d = mu_s[f] - mu_t[f]
        mv[f] = alpha * mu_s[f] + beta * mu_t[f]
        vv[f] = alpha * var_s[f] + beta * var_t[f] + ab * (d * d)
    return mean, var


def ema_update(double m, const double[::1] prev_mean, const double[::1] prev_var,
               const double[::1] batch_mean, const double[::1] batch_var):
    cdef Py_ssize_t F = prev_mean.shape[0], f
    cdef double keep = 1.0 - m
    mean = np.empty(F)
    var = np.empty(F)
    cdef double[::1] mv = mean, vv = var
    for f in range(F):
        mv[f] = m * batch_mean[f] + keep * prev_mean[f]
        vv[f] = m * batch_var[f] + keep * prev_var[f]
    return mean, var


def sym_kl(const double[::1] mu_p, const double[::1] var_p,
           const double[::1] mu_q, const double[::1] var_q,
           double floor_, bint reduce_mean=True):
    cdef Py_ssize_t F = mu_p.shape[0], f
    cdef double vp, vq, d2, c, total = 0.0
    for f in range(F):
        vp = var_p[f] if var_p[f] > floor_ else floor_
        vq = var_q[f] if var_q[f] > floor_ else floor_
        d2 = (mu_p[f] - mu_q[f]) * (mu_p[f] - mu_q[f])
        c = 0.25 * ((vp + d2) / vq + (vq + d2) / vp) - 0.5
        if c > 0.0:
            total += c
    if reduce_mean:
        return total / F
    return total


def composition_nonempty(const double[:, ::1] uniforms, Py_ssize_t n_slots):
    cdef Py_ssize_t trials = uniforms.shape[0], n_bars = uniforms.shape[1]
    cdef Py_ssize_t i, s, j, t, p, first = n_slots - n_bars
    cdef long long nonempty
    cdef bint star
    out = np.empty(trials, dtype=np.int64)
    cdef long long[::1] ov = out
    mark_arr = np.zeros(n_slots, dtype=np.uint8)
    cdef unsigned char[::1] mark = mark_arr
    for i in range(trials):
        for s in range(n_bars):
            j = first + s
            t = <Py_ssize_t>floor(uniforms[i, s] * (j + 1))
            if t > j:
                t = j
            if mark[t]:
                t = j
            mark[t] = 1
        nonempty = 0
        star = False
        for p in range(n_slots):
            if mark[p]:
                if star:
                    nonempty += 1
                star = False
                mark[p] = 0
            else:
                star = True
        if star:
            nonempty += 1
        ov[i] = nonempty
    return out
