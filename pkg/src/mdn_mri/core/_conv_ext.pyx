# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (float32 and float64).

Implicit-GEMM dilated convolution calling BLAS directly: each kernel tap is
one GEMM against a strided view of the flattened, zero-padded input, and
accumulation happens in place (beta = 1), so no patch matrix or temporaries
are allocated. Also provides the explicit im2col / col2im used for layers
with very few input channels.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k, floating alpha,
                       floating *a, int lda, floating *b, int ldb, floating beta,
                       floating *c, int ldc) noexcept nogil:
    # Column-major BLAS GEMM, C = alpha * op(A) op(B) + beta * C.
    if floating is float:
        sgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _pad_flat(const floating[:, :, :, ::1] x, floating[:, :, ::1] xp,
                    int pad) noexcept nogil:
    cdef Py_ssize_t n, c, y, xx
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3], wp = w + 2 * pad
    for n in range(x.shape[0]):
        for c in range(x.shape[1]):
            for y in range(h):
                for xx in range(w):
                    xp[n, c, (y + pad) * wp + xx + pad] = x[n, c, y, xx]


cdef void _forward(floating[:, :, ::1] xp, floating[:, :, :, ::1] taps,
                   const floating[::1] bias, floating[:, ::1] acc,
                   floating[:, :, :, ::1] out, int dil) noexcept nogil:
    cdef int nb = xp.shape[0], c = xp.shape[1], plane = xp.shape[2]
    cdef int k = taps.shape[0], o = taps.shape[2]
    cdef int h = out.shape[2], w = out.shape[3]
    cdef int pad = dil * (k - 1) // 2
    cdef int wp = w + 2 * pad, span = h * wp
    cdef int b, i, j, off, oc, y, xx
    cdef floating beta
    for b in range(nb):
        beta = 0
        for i in range(k):
            for j in range(k):
                off = i * dil * wp + j * dil
                # acc (o x span, row-major) (+)= taps[i,j] (o x c) @ xp[b, :, off:off+span]
                _gemm(b"N", b"N", span, o, c, 1, &xp[b, 0, off], plane,
                      &taps[i, j, 0, 0], c, beta, &acc[0, 0], span)
                beta = 1
        for oc in range(o):
            for y in range(h):
                for xx in range(w):
                    out[b, oc, y, xx] = acc[oc, y * wp + xx] + bias[oc]


cdef void _backward(floating[:, :, ::1] xp, floating[:, :, :, ::1] taps,
                    const floating[:, :, :, ::1] upstream, floating[:, ::1] dy,
                    floating[:, :, :, ::1] grad_taps, floating[:, :, ::1] dxp,
                    bint need_input, int dil) noexcept nogil:
    cdef int nb = xp.shape[0], c = xp.shape[1], plane = xp.shape[2]
    cdef int k = taps.shape[0], o = taps.shape[2]
    cdef int h = upstream.shape[2], w = upstream.shape[3]
    cdef int pad = dil * (k - 1) // 2
    cdef int wp = w + 2 * pad, span = h * wp
    cdef int b, i, j, off, oc, y, xx
    for b in range(nb):
        for oc in range(o):
            for y in range(h):
                for xx in range(w):
                    dy[oc, y * wp + xx] = upstream[b, oc, y, xx]
                for xx in range(w, wp):
                    dy[oc, y * wp + xx] = 0
        for i in range(k):
            for j in range(k):
                off = i * dil * wp + j * dil
                # grad_taps[i,j] (o x c) += dy (o x span) @ xp_slice^T (span x c)
                _gemm(b"T", b"N", c, o, span, 1, &xp[b, 0, off], plane,
                      &dy[0, 0], span, 1, &grad_taps[i, j, 0, 0], c)
                if need_input:
                    # dxp_slice (c x span) += taps[i,j]^T (c x o) @ dy (o x span)
                    _gemm(b"N", b"T", span, c, o, 1, &dy[0, 0], span,
                          &taps[i, j, 0, 0], c, 1, &dxp[b, 0, off], plane)


def conv_forward(x, weight, bias, int dilation):
    """Dilated, size-preserving convolution of (N, C, H, W) ``x``."""
    x = np.ascontiguousarray(x)
    dtype = x.dtype
    if dtype != np.float32 and dtype != np.float64:
        raise TypeError(f"unsupported dtype {dtype}")
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = weight.shape[0], k = weight.shape[2]
    cdef int pad = dilation * (k - 1) // 2
    cdef int wp = w + 2 * pad, hp = h + 2 * pad
    xp = np.zeros((n, c, hp * wp + 2 * pad), dtype=dtype)
    taps = np.ascontiguousarray(np.asarray(weight, dtype=dtype).transpose(2, 3, 0, 1))
    bias = np.ascontiguousarray(bias, dtype=dtype)
    acc = np.empty((o, h * wp), dtype=dtype)
    out = np.empty((n, o, h, w), dtype=dtype)
    if dtype == np.float32:
        _pad_flat[float](x, xp, pad)
        _forward[float](xp, taps, bias, acc, out, dilation)
    else:
        _pad_flat[double](x, xp, pad)
        _forward[double](xp, taps, bias, acc, out, dilation)
    return out


def conv_backward(x, weight, upstream, int dilation, bint need_input_grad=True):
    """Return ``(grad_input, grad_weight, grad_bias)`` for :func:`conv_forward`."""
    x = np.ascontiguousarray(x)
    dtype = x.dtype
    if dtype != np.float32 and dtype != np.float64:
        raise TypeError(f"unsupported dtype {dtype}")
    upstream = np.ascontiguousarray(upstream, dtype=dtype)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = weight.shape[0], k = weight.shape[2]
    cdef int pad = dilation * (k - 1) // 2
    cdef int wp = w + 2 * pad, hp = h + 2 * pad
    xp = np.zeros((n, c, hp * wp + 2 * pad), dtype=dtype)
    taps = np.ascontiguousarray(np.asarray(weight, dtype=dtype).transpose(2, 3, 0, 1))
    dy = np.empty((o, h * wp), dtype=dtype)
    grad_taps = np.zeros_like(taps)
    dxp = np.zeros_like(xp) if need_input_grad else np.zeros((1, 1, 1), dtype=dtype)
    if dtype == np.float32:
        _pad_flat[float](x, xp, pad)
        _backward[float](xp, taps, upstream, dy, grad_taps, dxp, need_input_grad, dilation)
    else:
        _pad_flat[double](x, xp, pad)
        _backward[double](xp, taps, upstream, dy, grad_taps, dxp, need_input_grad, dilation)
    grad_weight = np.ascontiguousarray(grad_taps.transpose(2, 3, 0, 1))
    grad_bias = upstream.sum(axis=(0, 2, 3))
    grad_input = None
    if need_input_grad:
        grad_input = np.ascontiguousarray(
            dxp[:, :, :hp * wp].reshape(n, c, hp, wp)[:, :, pad:pad + h, pad:pad + w])
    return grad_input, grad_weight, grad_bias


cdef void _im2col(const floating[:, :, :, ::1] x, floating[:, :, ::1] cols,
                  int k, int dil, int pad, int out_h, int out_w) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, y, xx, sy, sx, col, pix
    cdef Py_ssize_t nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    for n in range(x.shape[0]):
        for y in range(out_h):
            for xx in range(out_w):
                pix = y * out_w + xx
                col = 0
                for c in range(nc):
                    for i in range(k):
                        sy = y + i * dil - pad
                        for j in range(k):
                            sx = xx + j * dil - pad
                            if sy < 0 or sy >= h or sx < 0 or sx >= w:
                                cols[n, pix, col] = 0
                            else:
                                cols[n, pix, col] = x[n, c, sy, sx]
                            col = col + 1


cdef void _col2im(const floating[:, :, ::1] cols, floating[:, :, :, ::1] x,
                  int k, int dil, int pad, int out_h, int out_w) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, y, xx, sy, sx, col, pix
    cdef Py_ssize_t nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    for n in range(x.shape[0]):
        for y in range(out_h):
            for xx in range(out_w):
                pix = y * out_w + xx
                col = 0
                for c in range(nc):
                    for i in range(k):
                        sy = y + i * dil - pad
                        for j in range(k):
                            sx = xx + j * dil - pad
                            if sy >= 0 and sy < h and sx >= 0 and sx < w:
                                x[n, c, sy, sx] += cols[n, pix, col]
                            col = col + 1


def im2col(x, int kernel_size, int dilation, int padding):
    """Gather dilated patches of ``x`` (N, C, H, W) into (N, H*W, C*k*k)."""
    x = np.ascontiguousarray(x)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int out_h = h + 2 * padding - dilation * (kernel_size - 1)
    cdef int out_w = w + 2 * padding - dilation * (kernel_size - 1)
    cols = np.empty((n, out_h * out_w, c * kernel_size * kernel_size), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, kernel_size, dilation, padding, out_h, out_w)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, kernel_size, dilation, padding, out_h, out_w)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, int channels, int height, int width, int kernel_size,
           int dilation, int padding):
    """Scatter-add the inverse of :func:`im2col` back onto an (N, C, H, W) grid."""
    cols = np.ascontiguousarray(cols)
    cdef int out_h = height + 2 * padding - dilation * (kernel_size - 1)
    cdef int out_w = width + 2 * padding - dilation * (kernel_size - 1)
    x = np.zeros((cols.shape[0], channels, height, width), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, x, kernel_size, dilation, padding, out_h, out_w)
    elif cols.dtype == np.float64:
        _col2im[double](cols, x, kernel_size, dilation, padding, out_h, out_w)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return x
