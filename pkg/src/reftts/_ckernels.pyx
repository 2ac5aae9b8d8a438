# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: radix-2 FFT, same-padded conv1d and its gradients,
row scatter-add, and the fused Adam update. Arithmetic matches _pykernels.py.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, pow

cnp.import_array()


def fft_radix2(x, bint inverse=False):
    """Iterative radix-2 Cooley-Tukey transform along the last axis."""
    arr = np.ascontiguousarray(x, dtype=np.complex128)
    cdef Py_ssize_t n = arr.shape[arr.ndim - 1]
    flat = arr.reshape(-1, n).copy()
    _fft_rows(flat, n, inverse)
    if inverse:
        flat /= n
    return flat.reshape(arr.shape)


cdef void _fft_rows(cnp.complex128_t[:, ::1] a, Py_ssize_t n, bint inverse):
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t r, i, j, bit, size, half, start, k
    cdef double sign = 1.0 if inverse else -1.0
    cdef double ang
    cdef double complex tw, u, w
    # bit-reversal permutation
    for r in range(rows):
        j = 0
        for i in range(1, n):
            bit = n >> 1
            while j & bit:
                j ^= bit
                bit >>= 1
            j |= bit
            if i < j:
                u = a[r, i]
                a[r, i] = a[r, j]
                a[r, j] = u
    size = 2
    while size <= n:
        half = size >> 1
        for r in range(rows):
            for start in range(0, n, size):
                for k in range(half):
                    ang = sign * 2.0 * np.pi * k / size
                    tw = cos(ang) + 1j * sin(ang)
                    u = a[r, start + k]
                    w = a[r, start + half + k] * tw
                    a[r, start + k] = u + w
                    a[r, start + half + k] = u - w
        size <<= 1


def conv1d_forward(x, kernels):
    """(T, c_in) * (k, c_in, c_out) -> (T, c_out), zero padded to same length."""
    cdef cnp.float64_t[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] kv = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef Py_ssize_t t = xv.shape[0]
    cdef Py_ssize_t k = kv.shape[0], c_in = kv.shape[1], c_out = kv.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    out_arr = np.zeros((t, c_out), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, tap, ci, co, src
    cdef double acc
    for i in range(t):
        for co in range(c_out):
            acc = 0.0
            for tap in range(k):
                src = i + tap - pad
                if src < 0 or src >= t:
                    continue
                for ci in range(c_in):
                    acc += xv[src, ci] * kv[tap, ci, co]
            out[i, co] = acc
    return out_arr


def conv1d_backward(x, kernels, grad_out):
    """Gradients of conv1d_forward wrt input and kernels."""
    cdef cnp.float64_t[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] kv = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] gv = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t t = xv.shape[0]
    cdef Py_ssize_t k = kv.shape[0], c_in = kv.shape[1], c_out = kv.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    dx_arr = np.zeros((t, c_in), dtype=np.float64)
    dk_arr = np.zeros((k, c_in, c_out), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] dx = dx_arr
    cdef cnp.float64_t[:, :, ::1] dk = dk_arr
    cdef Py_ssize_t i, tap, ci, co, src
    cdef double g
    for i in range(t):
        for co in range(c_out):
            g = gv[i, co]
            if g == 0.0:
                continue
            for tap in range(k):
                src = i + tap - pad
                if src < 0 or src >= t:
                    continue
                for ci in range(c_in):
                    dx[src, ci] += g * kv[tap, ci, co]
                    dk[tap, ci, co] += g * xv[src, ci]
    return dx_arr, dk_arr


def scatter_add_rows(out, indices, src):
    """out[indices[i]] += src[i] for every i, in index order."""
    cdef cnp.float64_t[:, ::1] ov = out
    cdef cnp.int64_t[::1] iv = np.ascontiguousarray(indices, dtype=np.int64)
    cdef cnp.float64_t[:, ::1] sv = np.ascontiguousarray(src, dtype=np.float64)
    cdef Py_ssize_t m = iv.shape[0], d = ov.shape[1]
    cdef Py_ssize_t i, j, row
    for i in range(m):
        row = iv[i]
        for j in range(d):
            ov[row, j] += sv[i, j]


def adam_update(param, grad, m, v, long step, double lr, double beta1,
                double beta2, double eps):
    """One bias-corrected Adam update, in place on flat float64 arrays."""
    cdef cnp.float64_t[::1] pv = param
    cdef cnp.float64_t[::1] gv = np.ascontiguousarray(grad, dtype=np.float64)
    cdef cnp.float64_t[::1] mv = m
    cdef cnp.float64_t[::1] vv = v
    cdef Py_ssize_t n = pv.shape[0]
    cdef double c1 = 1.0 - pow(beta1, step)
    cdef double c2 = 1.0 - pow(beta2, step)
    cdef Py_ssize_t i
    cdef double g, m_hat, v_hat
    for i in range(n):
        g = gv[i]
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * g
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g
        m_hat = mv[i] / c1
        v_hat = vv[i] / c2
        pv[i] -= lr * m_hat / (sqrt(v_hat) + eps)
