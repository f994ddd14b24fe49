# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused row-wise kernels over (rows, actions) float64 matrices.

Each kernel makes one or two passes per row instead of the five or six
temporaries the numpy formulation allocates. Semantics match _kernels_py.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fmax, fmin, log

cnp.import_array()

DEF CLAMP = 1e-12


def softmax_rows(const double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], k = z.shape[1], i, j
    cdef double m, s
    out_arr = np.empty((n, k))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        m = z[i, 0]
        for j in range(1, k):
            m = z[i, j] if z[i, j] > m else m
        s = 0.0
        for j in range(k):
            out[i, j] = exp(z[i, j] - m)
            s += out[i, j]
        s = 1.0 / s
        for j in range(k):
            out[i, j] *= s
    return out_arr


def log_softmax_rows(const double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], k = z.shape[1], i, j
    cdef double m, s
    out_arr = np.empty((n, k))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        m = z[i, 0]
        for j in range(1, k):
            m = z[i, j] if z[i, j] > m else m
        s = 0.0
        for j in range(k):
            s += exp(z[i, j] - m)
        s = m + log(s)
        for j in range(k):
            out[i, j] = z[i, j] - s
    return out_arr


def softmax_backward(const double[:, ::1] p, const double[:, ::1] g):
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1], i, j
    cdef double dot
    out_arr = np.empty((n, k))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot += g[i, j] * p[i, j]
        for j in range(k):
            out[i, j] = p[i, j] * (g[i, j] - dot)
    return out_arr


def log_softmax_backward(const double[:, ::1] lp, const double[:, ::1] g):
    cdef Py_ssize_t n = lp.shape[0], k = lp.shape[1], i, j
    cdef double s
    out_arr = np.empty((n, k))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += g[i, j]
        for j in range(k):
            out[i, j] = g[i, j] - exp(lp[i, j]) * s
    return out_arr


def gumbel_noise(const double[:, ::1] u):
    # one flat loop so the compiler can vectorize log across rows
    cdef Py_ssize_t n = u.shape[0], k = u.shape[1], i, total = n * k
    out_arr = np.empty((n, k))
    cdef double[:, ::1] out2 = out_arr
    if total == 0:
        return out_arr
    cdef const double* src = &u[0, 0]
    cdef double* dst = &out2[0, 0]
    for i in range(total):
        dst[i] = -log(-log(fmin(fmax(src[i], CLAMP), 1.0 - CLAMP)))
    return out_arr


def perturbed_softmax(const double[:, ::1] logp, const double[:, ::1] noise, double tau):
    """softmax((logp + noise) / tau) row by row."""
    cdef Py_ssize_t n = logp.shape[0], k = logp.shape[1], i, j
    cdef double m, s, inv_tau = 1.0 / tau
    out_arr = np.empty((n, k))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(k):
            out[i, j] = (logp[i, j] + noise[i, j]) * inv_tau
        m = out[i, 0]
        for j in range(1, k):
            m = out[i, j] if out[i, j] > m else m
        s = 0.0
        for j in range(k):
            out[i, j] = exp(out[i, j] - m)
            s += out[i, j]
        s = 1.0 / s
        for j in range(k):
            out[i, j] *= s
    return out_arr


def divergence_value_grad(const double[:, ::1] p, const double[:, ::1] p0):
    """(1/N) sum p^2 / p0 and its gradient 2 p / (N p0)."""
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1], i, j
    cdef double total = 0.0, row, r, scale = 2.0 / n
    grad_arr = np.empty((n, k))
    cdef double[:, ::1] grad = grad_arr
    for i in range(n):
        row = 0.0
        for j in range(k):
            r = p[i, j] / p0[i, j]
            row += r * p[i, j]
            grad[i, j] = scale * r
        total += row
    return total / n, grad_arr


# -- single-hidden-layer discriminator ------------------------------------


def relu_dot(double[:, ::1] pre, const double[::1] w, double b):
    """ReLU ``pre`` in place and return ``relu(pre) @ w + b``."""
    cdef Py_ssize_t n = pre.shape[0], h = pre.shape[1], i, j
    cdef double acc
    t_arr = np.empty(n)
    cdef double[::1] t = t_arr
    for i in range(n):
        acc = b
        for j in range(h):
            pre[i, j] = fmax(pre[i, j], 0.0)
            acc += pre[i, j] * w[j]
        t[i] = acc
    return t_arr


def gather_relu_dot(const double[:, ::1] xw, const double[:, ::1] wy,
                    const cnp.int64_t[::1] actions, const double[::1] w, double b):
    """h = relu(xw + wy[actions]); returns (h, h @ w + b)."""
    cdef Py_ssize_t n = xw.shape[0], hw = xw.shape[1], i, j, a
    cdef double acc
    h_arr = np.empty((n, hw))
    t_arr = np.empty(n)
    cdef double[:, ::1] hid = h_arr
    cdef double[::1] t = t_arr
    for i in range(n):
        a = actions[i]
        acc = b
        for j in range(hw):
            hid[i, j] = fmax(xw[i, j] + wy[a, j], 0.0)
            acc += hid[i, j] * w[j]
        t[i] = acc
    return h_arr, t_arr


def masked_outer(const double[:, ::1] hid, const double[::1] g, const double[::1] w):
    """out[i, j] = g[i] * w[j] where hid[i, j] > 0, else 0."""
    cdef Py_ssize_t n = hid.shape[0], hw = hid.shape[1], i, j
    cdef double gi
    out_arr = np.empty((n, hw))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        gi = g[i]
        for j in range(hw):
            out[i, j] = (hid[i, j] > 0.0) * (gi * w[j])
    return out_arr


def scatter_add_rows(const double[:, ::1] rows, const cnp.int64_t[::1] index, Py_ssize_t k):
    """out[a] = sum of rows[i] with index[i] == a, shape (k, cols)."""
    cdef Py_ssize_t n = rows.shape[0], c = rows.shape[1], i, j, a
    out_arr = np.zeros((k, c))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        a = index[i]
        for j in range(c):
            out[a, j] += rows[i, j]
    return out_arr
