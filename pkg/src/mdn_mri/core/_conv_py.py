"""Pure-numpy convolution kernels.

Reference backend, used when the compiled extension is unavailable or when
``MDN_BACKEND=python`` is set.

Two strategies are provided. ``im2col``/``col2im`` build an explicit patch
matrix and suit layers with very few input channels. ``conv_forward`` /
``conv_backward`` use an implicit GEMM: the zero-padded input is flattened
per channel, and for tap (i, j) the slice starting at ``i*d*Wp + j*d`` is a
(C, H*Wp) matrix view, so each tap is one GEMM with no patch copy. Output
columns falling in the horizontal padding are computed and discarded.
"""

import numpy as np


def im2col(x, kernel_size, dilation, padding):
    """Gather dilated patches of ``x`` (N, C, H, W) into (N, H*W, C*k*k)."""
    n, c, h, w = x.shape
    k = kernel_size
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = h + 2 * padding - dilation * (k - 1)
    out_w = w + 2 * padding - dilation * (k - 1)
    cols = np.empty((n, out_h, out_w, c, k, k), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i * dilation:i * dilation + out_h, j * dilation:j * dilation + out_w]
            cols[..., i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n, out_h * out_w, c * k * k)


def col2im(cols, channels, height, width, kernel_size, dilation, padding):
    """Scatter-add the inverse of :func:`im2col` back onto an (N, C, H, W) grid."""
    n = cols.shape[0]
    k = kernel_size
    out_h = height + 2 * padding - dilation * (k - 1)
    out_w = width + 2 * padding - dilation * (k - 1)
    cols = cols.reshape(n, out_h, out_w, channels, k, k)
    xp = np.zeros((n, channels, height + 2 * padding, width + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i * dilation:i * dilation + out_h,
               j * dilation:j * dilation + out_w] += cols[..., i, j].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(xp[:, :, padding:padding + height, padding:padding + width])


def _padded_flat(x, pad):
    # (N, C, plane) with plane = Hp*Wp + 2*pad: the slack keeps the last
    # tap's slice in bounds.
    n, c, h, w = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    flat = np.zeros((n, c, hp * wp + 2 * pad), dtype=x.dtype)
    flat[:, :, :hp * wp].reshape(n, c, hp, wp)[:, :, pad:pad + h, pad:pad + w] = x
    return flat


def _offsets(k, dilation, wp):
    return [(i, j, i * dilation * wp + j * dilation) for i in range(k) for j in range(k)]


def conv_forward(x, weight, bias, dilation):
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    pad = dilation * (k - 1) // 2
    wp = w + 2 * pad
    span = h * wp
    xp = _padded_flat(x, pad)
    taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
    out = np.zeros((n, o, span), dtype=x.dtype)
    for b in range(n):
        for i, j, off in _offsets(k, dilation, wp):
            out[b] += taps[i, j] @ xp[b, :, off:off + span]
    out = out.reshape(n, o, h, wp)[:, :, :, :w] + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv_backward(x, weight, upstream, dilation, need_input_grad=True):
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    pad = dilation * (k - 1) // 2
    wp = w + 2 * pad
    span = h * wp
    xp = _padded_flat(x, pad)
    dy = np.zeros((n, o, h, wp), dtype=x.dtype)
    dy[..., :w] = upstream
    dy = dy.reshape(n, o, span)
    taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
    grad_taps = np.zeros_like(taps)
    dxp = np.zeros_like(xp) if need_input_grad else None
    for b in range(n):
        for i, j, off in _offsets(k, dilation, wp):
            grad_taps[i, j] += dy[b] @ xp[b, :, off:off + span].T
            if need_input_grad:
                dxp[b, :, off:off + span] += taps[i, j].T @ dy[b]
    grad_weight = np.ascontiguousarray(grad_taps.transpose(2, 3, 0, 1))
    grad_bias = upstream.sum(axis=(0, 2, 3))
    grad_input = None
    if need_input_grad:
        hp = h + 2 * pad
        grad_input = np.ascontiguousarray(
            dxp[:, :, :hp * wp].reshape(n, c, hp, wp)[:, :, pad:pad + h, pad:pad + w])
    return grad_input, grad_weight, grad_bias
