"""Differentiable operators on (N, C, H, W) arrays with hand-written backward passes.

Every forward keeps the dtype of its input, so the same code runs in float32
for training and float64 inside the gradient-check harness.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; the message names the dimension."""


@dataclass(frozen=True)
class ConvSpec:
    """Stride-1, size-preserving 2-D convolution.

    Padding is derived, ``dilation * (kernel_size - 1) / 2``, so output H, W
    always equal input H, W.
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def padding(self):
        return self.dilation * (self.kernel_size - 1) // 2

    @property
    def extent(self):
        """Receptive field of the layer along one axis."""
        return self.dilation * (self.kernel_size - 1) + 1

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)


@dataclass
class Parameter:
    """A trainable array with its gradient and Adam moment accumulators."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0


def _check_rank4(x, name):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (N, C, H, W), got shape {x.shape}")


def _use_im2col(spec):
    # Implicit GEMM degenerates to outer products when C is tiny; an explicit
    # patch matrix is faster there.
    return spec.in_channels < 4


def conv2d_forward(x, spec, weight, bias):
    """Dilated, zero-padded convolution.

    ``out[n, o, y, x] = bias[o] + sum_{c,i,j} weight[o, c, i, j] *
    padded[n, c, y + dilation*i, x + dilation*j]``.
    """
    _check_rank4(x, "input")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input channel dimension is {x.shape[1]}, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != {spec.weight_shape}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    if _use_im2col(spec):
        n, _, h, w = x.shape
        cols = backend.im2col(x, spec.kernel_size, spec.dilation, spec.padding)
        out = np.matmul(cols, weight.reshape(spec.out_channels, -1).T)
        out += bias
        return np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, spec.out_channels, h, w)
    return backend.conv_forward(x, weight, bias, spec.dilation)


def conv2d_backward(x, spec, weight, upstream, need_input_grad=True):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weight and bias.

    Returns ``(grad_input, grad_weight, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false.
    """
    _check_rank4(upstream, "upstream")
    n, _, h, w = x.shape
    expected = (n, spec.out_channels, h, w)
    if upstream.shape != expected:
        raise ShapeError(f"upstream shape {upstream.shape} != forward output shape {expected}")
    if not _use_im2col(spec):
        return backend.conv_backward(x, weight, upstream, spec.dilation, need_input_grad)
    dy = upstream.reshape(n, spec.out_channels, h * w)
    grad_bias = dy.sum(axis=(0, 2))
    cols = backend.im2col(x, spec.kernel_size, spec.dilation, spec.padding)
    dy_t = np.ascontiguousarray(dy.transpose(0, 2, 1))
    grad_weight = np.zeros((cols.shape[2], spec.out_channels), dtype=x.dtype)
    for i in range(n):
        grad_weight += cols[i].T @ dy_t[i]
    grad_weight = np.ascontiguousarray(grad_weight.T).reshape(spec.weight_shape)
    grad_input = None
    if need_input_grad:
        dcols = np.matmul(dy_t, weight.reshape(spec.out_channels, -1))
        grad_input = backend.col2im(dcols, spec.in_channels, h, w,
                                    spec.kernel_size, spec.dilation, spec.padding)
    return grad_input, grad_weight, grad_bias


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, upstream):
    """Pass ``upstream`` where the forward input was strictly positive."""
    return np.where(x > 0, upstream, 0).astype(upstream.dtype, copy=False)


@dataclass
class RunningStats:
    """Per-channel running mean/variance used by batchnorm in inference mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def init(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm_forward(x, gamma, beta, stats, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    In training mode the batch mean/variance over (N, H, W) normalize the
    input and ``stats`` is updated in place by an exponential moving average
    (unbiased variance). In inference mode ``stats`` is used as-is.

    Returns ``(out, cache)``; pass ``cache`` to :func:`batchnorm_backward`.
    """
    _check_rank4(x, "input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if training:
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / max(count - 1, 1)
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mean
        stats.var[...] = (1 - momentum) * stats.var + momentum * unbiased
    else:
        mean = stats.mean.astype(x.dtype, copy=False)
        var = stats.var.astype(x.dtype, copy=False)
        centered = x - mean[None, :, None, None]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = centered * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(cache, upstream):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, training = cache
    grad_beta = upstream.sum(axis=(0, 2, 3))
    grad_gamma = (upstream * xhat).sum(axis=(0, 2, 3))
    dxhat = upstream * gamma[None, :, None, None]
    if training:
        count = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
        grad_input = (inv_std[None, :, None, None] / count) * (
            count * dxhat
            - grad_beta[None, :, None, None] * gamma[None, :, None, None]
            - xhat * (grad_gamma * gamma)[None, :, None, None])
    else:
        grad_input = dxhat * inv_std[None, :, None, None]
    return grad_input, grad_gamma, grad_beta


def concat_channels(parts):
    """Stack ``parts`` along the channel axis, in argument order."""
    if not parts:
        raise ShapeError("concat needs at least one part")
    for p in parts:
        _check_rank4(p, "concat part")
    n, _, h, w = parts[0].shape
    for idx, p in enumerate(parts[1:], start=1):
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            dim = next(name for name, a, b in (("N", p.shape[0], n), ("H", p.shape[2], h),
                                               ("W", p.shape[3], w)) if a != b)
            raise ShapeError(f"concat part {idx} differs in dimension {dim}: "
                             f"{p.shape} vs {parts[0].shape}")
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts, axis=1)


def concat_backward(upstream, channel_sizes):
    """Split ``upstream`` back into per-part gradients."""
    if sum(channel_sizes) != upstream.shape[1]:
        raise ShapeError(f"channel sizes {channel_sizes} do not sum to {upstream.shape[1]}")
    bounds = np.cumsum(channel_sizes)[:-1]
    return np.split(upstream, bounds, axis=1)


def residual_add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"residual operands differ in shape: {a.shape} vs {b.shape}")
    return a + b


def residual_add_backward(upstream):
    return upstream, upstream


def mse_loss(predictions, targets):
    """Halved mean of per-image pixel-mean squared errors.

    ``loss = 1/(2M) * sum_i mean((pred_i - target_i)**2)`` over M images.
    ``predictions``/``targets`` are lists of arrays or (M, ...) arrays whose
    leading axis indexes images. Returns ``(loss, grads)`` with grads shaped
    like ``predictions``.
    """
    if isinstance(predictions, np.ndarray):
        predictions = list(predictions)
        targets = list(targets)
        stacked = True
    else:
        stacked = False
    m = len(predictions)
    if m == 0:
        raise ShapeError("mse_loss needs at least one prediction")
    if len(targets) != m:
        raise ShapeError(f"{m} predictions but {len(targets)} targets")
    loss = 0.0
    grads = []
    for p, t in zip(predictions, targets):
        if p.shape != t.shape:
            raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
        diff = p - t
        loss += float(np.mean(np.square(diff, dtype=np.float64)))
        grads.append(diff / (m * diff.size))
    loss /= 2 * m
    if stacked:
        grads = np.stack(grads)
    return loss, grads
