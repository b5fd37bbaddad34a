"""Minimal differentiable-operator substrate for the MDN."""

from . import backend
from .ops import (
    ConvSpec,
    Parameter,
    RunningStats,
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
    relu,
    relu_backward,
    residual_add,
    residual_add_backward,
)
from .optim import OptimizerConfig, adam_step, step_lr

__all__ = [
    "ConvSpec", "OptimizerConfig", "Parameter", "RunningStats", "ShapeError",
    "adam_step", "backend", "batchnorm_backward", "batchnorm_forward",
    "concat_backward", "concat_channels", "conv2d_backward", "conv2d_forward",
    "mse_loss", "relu", "relu_backward", "residual_add", "residual_add_backward",
    "step_lr",
]
