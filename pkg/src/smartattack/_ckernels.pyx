# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of ``_kernels_py``; identical signatures and semantics."""

import numpy as np
from libc.math cimport sqrt


def im2col(const double[:, :, ::1] x, Py_ssize_t k, Py_ssize_t pad):
    cdef Py_ssize_t b = x.shape[0], t = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t t_out = t + 2 * pad - k + 1
    out = np.zeros((b, t_out, k * c))
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t n, s, i, ch, src
    for n in range(b):
        for s in range(t_out):
            for i in range(k):
                src = s + i - pad
                if src < 0 or src >= t:
                    continue
                for ch in range(c):
                    cols[n, s, i * c + ch] = x[n, src, ch]
    return out


def col2im(const double[:, :, ::1] cols, Py_ssize_t t, Py_ssize_t c, Py_ssize_t k, Py_ssize_t pad):
    cdef Py_ssize_t b = cols.shape[0], t_out = cols.shape[1]
    out = np.zeros((b, t, c))
    cdef double[:, :, ::1] x = out
    cdef Py_ssize_t n, s, i, ch, dst
    for n in range(b):
        for s in range(t_out):
            for i in range(k):
                dst = s + i - pad
                if dst < 0 or dst >= t:
                    continue
                for ch in range(c):
                    x[n, dst, ch] += cols[n, s, i * c + ch]
    return out


def bone_lengths(const double[:, ::1] x, const Py_ssize_t[::1] child, const Py_ssize_t[::1] parent):
    cdef Py_ssize_t n_rows = x.shape[0], nb = child.shape[0]
    out = np.empty((n_rows, nb))
    cdef double[:, ::1] lengths = out
    cdef Py_ssize_t n, b, ax, ci, pi
    cdef double acc, d
    for n in range(n_rows):
        for b in range(nb):
            ci = 3 * child[b]
            pi = 3 * parent[b]
            acc = 0.0
            for ax in range(3):
                d = x[n, ci + ax] - x[n, pi + ax]
                acc += d * d
            lengths[n, b] = sqrt(acc)
    return out


def bone_lengths_vjp(const double[:, ::1] x, const double[:, ::1] lengths, const double[:, ::1] g,
                     const Py_ssize_t[::1] child, const Py_ssize_t[::1] parent):
    cdef Py_ssize_t n_rows = x.shape[0], nb = child.shape[0]
    out = np.zeros((n_rows, x.shape[1]))
    cdef double[:, ::1] gx = out
    cdef Py_ssize_t n, b, ax, ci, pi
    cdef double coef, d
    for n in range(n_rows):
        for b in range(nb):
            if lengths[n, b] <= 0.0:
                continue
            coef = g[n, b] / lengths[n, b]
            ci = 3 * child[b]
            pi = 3 * parent[b]
            for ax in range(3):
                d = coef * (x[n, ci + ax] - x[n, pi + ax])
                gx[n, ci + ax] += d
                gx[n, pi + ax] -= d
    return out


def forward_diff(const double[:, :, ::1] x, Py_ssize_t n):
    cdef Py_ssize_t b = x.shape[0], t = x.shape[1], dd = x.shape[2]
    buf = np.array(x, copy=True)
    cdef double[:, :, ::1] w = buf
    cdef Py_ssize_t r, s, i, j
    for r in range(n):
        for i in range(b):
            for s in range(t - r - 1):
                for j in range(dd):
                    w[i, s, j] = w[i, s + 1, j] - w[i, s, j]
    return np.ascontiguousarray(buf[:, :t - n])


def forward_diff_adjoint(const double[:, :, ::1] g, Py_ssize_t n):
    cdef Py_ssize_t b = g.shape[0], t_in = g.shape[1], dd = g.shape[2]
    cdef Py_ssize_t t = t_in + n
    buf = np.zeros((b, t, dd))
    buf[:, :t_in] = g
    cdef double[:, :, ::1] w = buf
    cdef Py_ssize_t r, s, i, j, length
    # each pass maps a length-L sequence to length L+1: y[s] = x[s-1] - x[s]
    for r in range(n):
        length = t_in + r
        for i in range(b):
            for j in range(dd):
                w[i, length, j] = w[i, length - 1, j]
                for s in range(length - 1, 0, -1):
                    w[i, s, j] = w[i, s - 1, j] - w[i, s, j]
                w[i, 0, j] = -w[i, 0, j]
    return buf
