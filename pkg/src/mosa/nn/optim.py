"""First-order optimizers over a :class:`ParameterSet`."""

from __future__ import annotations

from typing import Dict

import numpy as np

from .core import ParameterSet


def sgd_step(params: ParameterSet, lr: float) -> None:
    """In-place ``p <- p - lr * g``, then clear gradients."""
    for p in params.trainable().values():
        p.value -= lr * p.grad
        p.zero_grad()


class SGD:
    def __init__(self, params: ParameterSet, lr: float = 1e-2):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        sgd_step(self.params, self.lr)


class Adam:
    def __init__(self, params: ParameterSet, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        params = params.trainable()
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {k: np.zeros_like(p.value) for k, p in params.items()}
        self._v: Dict[str, np.ndarray] = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


def make_optimizer(name: str, params: ParameterSet, lr: float):
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
