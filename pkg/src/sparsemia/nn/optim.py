"""SGD with heavy-ball momentum, Adam, and the step learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .module import Parameter


def lr_at_epoch(config, epoch: int) -> float:
    """Initial rate divided by ``1/lr_drop_factor`` after each drop epoch passed."""
    drops = sum(1 for e in config.lr_drop_epochs if epoch >= e)
    return config.initial_lr * config.lr_drop_factor ** drops


class SGD:
    """Heavy-ball momentum without Nesterov.

    Weight decay is coupled: ``wd * w`` is added to the gradient of
    parameters flagged with ``decay`` (conv/dense/butterfly weights, not
    biases or batch-norm affine terms).
    """

    def __init__(self, params: list[Parameter], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float) -> None:
        for p, buf in zip(self.params, self.buffers):
            g = p.grad
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.value
            if p.mask is not None:
                g = g * p.mask
            buf *= self.momentum
            buf += g
            p.value -= lr * buf
            p.apply_mask()


class Adam:
    def __init__(self, params: list[Parameter], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.mask is None else p.grad * p.mask
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.apply_mask()
