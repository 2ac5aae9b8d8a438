"""Pure-numpy implementations of the hot numeric kernels.

Mirror of the compiled extension in _ckernels.pyx; kernels.py picks one of
the two at import time. Both backends implement identical arithmetic, so
they agree to floating-point noise, but results are only guaranteed
bit-stable within a single backend.
"""

import numpy as np

_REV_CACHE = {}


def _bit_reverse_indices(n):
    idx = _REV_CACHE.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        fwd = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev = (rev << 1) | ((fwd >> b) & 1)
        idx = rev
        _REV_CACHE[n] = idx
    return idx


def fft_radix2(x, inverse=False):
    """Iterative radix-2 Cooley-Tukey transform along the last axis.

    x: complex128 array with power-of-two last dimension. Returns a new
    array; the inverse transform includes the 1/n scaling.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    out = x[..., _bit_reverse_indices(n)].copy()
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        v = out.reshape(out.shape[:-1] + (n // size, size))
        even = v[..., :half].copy()
        odd = v[..., half:] * tw
        v[..., :half] = even + odd
        v[..., half:] = even - odd
        size *= 2
    if inverse:
        out /= n
    return out


def conv1d_forward(x, kernels):
    """Length-preserving 1-D convolution with zero padding.

    x: (T, c_in), kernels: (k, c_in, c_out) with odd k. Returns (T, c_out).
    """
    k, c_in, c_out = kernels.shape
    t = x.shape[0]
    pad = (k - 1) // 2
    xp = np.zeros((t + 2 * pad, c_in), dtype=np.float64)
    xp[pad : pad + t] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, c_in, k)
    cols = windows.transpose(0, 2, 1).reshape(t, k * c_in)
    return cols @ kernels.reshape(k * c_in, c_out)


def conv1d_backward(x, kernels, grad_out):
    """Gradients of conv1d_forward wrt input and kernels."""
    k, c_in, c_out = kernels.shape
    t = x.shape[0]
    pad = (k - 1) // 2
    xp = np.zeros((t + 2 * pad, c_in), dtype=np.float64)
    xp[pad : pad + t] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)
    cols = windows.transpose(0, 2, 1).reshape(t, k * c_in)
    grad_k = (cols.T @ grad_out).reshape(k, c_in, c_out)

    # dx: correlate grad_out with the kernel flipped along its tap axis.
    gp = np.zeros((t + 2 * pad, c_out), dtype=np.float64)
    gp[pad : pad + t] = grad_out
    gwin = np.lib.stride_tricks.sliding_window_view(gp, k, axis=0)  # (T, c_out, k)
    gcols = gwin.transpose(0, 2, 1).reshape(t, k * c_out)
    kt = kernels[::-1].transpose(0, 2, 1).reshape(k * c_out, c_in)
    grad_x = gcols @ kt
    return grad_x, grad_k


def scatter_add_rows(out, indices, src):
    """out[indices[i]] += src[i] for every i, in index order."""
    np.add.at(out, indices, src)


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
