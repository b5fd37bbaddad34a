"""Adam with coupled L2 weight decay and a step learning-rate schedule."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 0.001
    weight_decay: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_gamma: float = 0.1
    lr_step: int = 50000
    max_iterations: int = 250000

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0 or self.lr_gamma <= 0 or self.lr_step <= 0:
            raise ValueError("epsilon, lr_gamma and lr_step must be positive")


def step_lr(iteration, config):
    """``base_lr * gamma ** floor(iteration / lr_step)``."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.base_lr * config.lr_gamma ** (iteration // config.lr_step)


def adam_step(param, config, lr):
    """Apply one Adam update to ``param`` in place and return it.

    Weight decay is added to the gradient before the moment updates.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    dtype = param.value.dtype
    g = param.grad
    if config.weight_decay:
        g = g + config.weight_decay * param.value
    param.step_count += 1
    t = param.step_count
    b1, b2 = config.beta1, config.beta2
    param.adam_m *= b1
    param.adam_m += (1 - b1) * g
    param.adam_v *= b2
    param.adam_v += (1 - b2) * np.square(g)
    m_hat = param.adam_m / (1 - b1 ** t)
    v_hat = param.adam_v / (1 - b2 ** t)
    param.value -= (lr * m_hat / (np.sqrt(v_hat) + config.epsilon)).astype(dtype, copy=False)
    return param
