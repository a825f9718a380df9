"""Post-norm transformer encoder and decoder stacks."""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .attention import MultiHeadAttention
from .core import DTYPE, Module, ShapeError, require_cache
from .layers import FeedForward, LayerNorm


def sinusoidal_positions(positions: np.ndarray, dim: int) -> np.ndarray:
    """Sine/cosine position table, one row per entry of ``positions``."""
    positions = np.asarray(positions, dtype=DTYPE)
    i = np.arange(dim // 2 + dim % 2)
    freq = 1.0 / np.power(10000.0, 2.0 * i / dim)
    angles = positions[..., None] * freq
    table = np.zeros(positions.shape + (dim,))
    table[..., 0::2] = np.sin(angles)[..., : (dim + 1) // 2]
    table[..., 1::2] = np.cos(angles)[..., : dim // 2]
    return table


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, x, mask=None):
        a, ca = self.attn.forward(x, x, x, mask)
        h, c1 = self.norm1.forward(x + a)
        f, cf = self.ffn.forward(h)
        y, c2 = self.norm2.forward(h + f)
        return y, (ca, c1, cf, c2)

    def backward(self, grad_y, cache):
        require_cache(cache)
        ca, c1, cf, c2 = cache
        g = self.norm2.backward(grad_y, c2)
        g_h = g + self.ffn.backward(g, cf)
        g = self.norm1.backward(g_h, c1)
        gq, gk, gv = self.attn.backward(g, ca)
        return g + gq + gk + gv


class DecoderLayer(Module):
    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden, rng)
        self.norm3 = LayerNorm(dim)

    def forward(self, x, memory, target_mask=None, memory_mask=None):
        a, ca = self.self_attn.forward(x, x, x, target_mask)
        h1, c1 = self.norm1.forward(x + a)
        c, cc = self.cross_attn.forward(h1, memory, memory, memory_mask)
        h2, c2 = self.norm2.forward(h1 + c)
        f, cf = self.ffn.forward(h2)
        y, c3 = self.norm3.forward(h2 + f)
        return y, (ca, c1, cc, c2, cf, c3)

    def backward(self, grad_y, cache):
        """Return gradients for (x, memory)."""
        require_cache(cache)
        ca, c1, cc, c2, cf, c3 = cache
        g = self.norm3.backward(grad_y, c3)
        g_h2 = g + self.ffn.backward(g, cf)
        g = self.norm2.backward(g_h2, c2)
        gq, gk, gv = self.cross_attn.backward(g, cc)
        g_h1 = g + gq
        g_mem = gk + gv
        g = self.norm1.backward(g_h1, c1)
        sq, sk, sv = self.self_attn.backward(g, ca)
        return g + sq + sk + sv, g_mem


class TransformerEncoder(Module):
    """Self-attention stack without positional encoding (set semantics)."""

    def __init__(self, dim: int, heads: int, layers: int, hidden: int, rng: np.random.Generator):
        self.dim = dim
        self.layers: List[EncoderLayer] = [EncoderLayer(dim, heads, hidden, rng) for _ in range(layers)]

    def forward(self, x, mask: Optional[np.ndarray] = None):
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"encoder expects width {self.dim}, got {x.shape[-1]}")
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, mask)
            caches.append(c)
        return x, caches

    def backward(self, grad_y, cache):
        require_cache(cache)
        g = grad_y
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            g = layer.backward(g, c)
        return g


class TransformerDecoder(Module):
    """Decoder stack; sinusoidal positions are added to the target sequence.

    ``positions`` defaults to ``0..T-1`` along the sequence axis.
    """

    def __init__(self, dim: int, heads: int, layers: int, hidden: int, rng: np.random.Generator):
        self.dim = dim
        self.layers: List[DecoderLayer] = [DecoderLayer(dim, heads, hidden, rng) for _ in range(layers)]

    def forward(self, target, memory, positions=None, target_mask=None, memory_mask=None):
        target = np.asarray(target, dtype=DTYPE)
        memory = np.asarray(memory, dtype=DTYPE)
        if target.shape[-1] != self.dim or memory.shape[-1] != self.dim:
            raise ShapeError(f"decoder expects width {self.dim}")
        if target.ndim != memory.ndim:
            raise ShapeError("target and memory must have the same rank")
        if positions is None:
            t = target.shape[-2]
            positions = np.broadcast_to(np.arange(t), target.shape[:-1])
        x = target + sinusoidal_positions(positions, self.dim)
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, memory, target_mask, memory_mask)
            caches.append(c)
        return x, caches

    def backward(self, grad_y, cache):
        """Return gradients for (target, memory)."""
        require_cache(cache)
        g = grad_y
        g_mem = None
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            g, gm = layer.backward(g, c)
            g_mem = gm if g_mem is None else g_mem + gm
        return g, g_mem


def transformer_encoder(x, encoder: TransformerEncoder, mask=None) -> np.ndarray:
    return encoder.forward(x, mask)[0]


def transformer_decoder(target, memory, decoder: TransformerDecoder, **kwargs) -> np.ndarray:
    return decoder.forward(target, memory, **kwargs)[0]
