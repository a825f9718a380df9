"""Dense layers, layer normalization, activations and a small MLP."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .core import DTYPE, Module, Parameter, ShapeError, glorot_uniform, require_cache


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (grad_y - np.sum(grad_y * y, axis=-1, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ W + b`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: input {x.shape} vs weight {W.shape} / bias {b.shape}")
    return x @ W + b


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(glorot_uniform(rng, in_features, out_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: np.ndarray):
        b = self.bias.value if self.bias is not None else np.zeros(self.out_features)
        return linear_forward(x, self.weight.value, b), x

    def backward(self, grad_y: np.ndarray, cache) -> np.ndarray:
        require_cache(cache)
        x = cache
        x2 = x.reshape(-1, self.in_features)
        g2 = grad_y.reshape(-1, self.out_features)
        self.weight.grad += x2.T @ g2
        if self.bias is not None:
            self.bias.grad += g2.sum(axis=0)
        return grad_y @ self.weight.value.T


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim = dim
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.dim:
            raise ShapeError(f"layernorm: last axis {x.shape[-1]} != {self.dim}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        return xhat * self.gamma.value + self.beta.value, (xhat, inv)

    def backward(self, grad_y: np.ndarray, cache) -> np.ndarray:
        require_cache(cache)
        xhat, inv = cache
        d = self.dim
        self.gamma.grad += np.sum((grad_y * xhat).reshape(-1, d), axis=0)
        self.beta.grad += np.sum(grad_y.reshape(-1, d), axis=0)
        gx = grad_y * self.gamma.value
        return inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * np.mean(gx * xhat, axis=-1, keepdims=True))


class MLP(Module):
    """Linear layers with rectifiers between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.layers: List[Linear] = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x: np.ndarray):
        caches = []
        h = np.asarray(x, dtype=DTYPE)
        if h.shape[-1] != self.sizes[0]:
            raise ShapeError(f"mlp: input width {h.shape[-1]} != {self.sizes[0]}")
        for i, layer in enumerate(self.layers):
            h, c = layer.forward(h)
            mask = None
            if i < len(self.layers) - 1:
                mask = h > 0
                h = h * mask
            caches.append((c, mask))
        return h, caches

    def backward(self, grad_y: np.ndarray, cache) -> np.ndarray:
        require_cache(cache)
        g = grad_y
        for layer, (c, mask) in zip(reversed(self.layers), reversed(cache)):
            if mask is not None:
                g = g * mask
            g = layer.backward(g, c)
        return g


class FeedForward(Module):
    """Position-wise two-layer network used inside transformer blocks."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.net = MLP([dim, hidden, dim], rng)

    def forward(self, x):
        return self.net.forward(x)

    def backward(self, grad_y, cache):
        return self.net.backward(grad_y, cache)
