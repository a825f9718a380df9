"""Multi-head scaled dot-product attention with a hand-written backward."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import DTYPE, Module, ShapeError, require_cache
from .layers import Linear, softmax_rows

_MASKED = -1e9


class MultiHeadAttention(Module):
    """Attention over batched sequences.

    Inputs are ``(B, T, D)`` arrays (2-d ``(T, D)`` inputs are treated as a
    batch of one). ``key_mask`` is a boolean ``(B, T_k)`` array, True where a
    key is real; padded keys receive no attention weight.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1 or dim % heads:
            raise ShapeError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, q_in, k_in, v_in, key_mask: Optional[np.ndarray] = None):
        q_in = np.asarray(q_in, dtype=DTYPE)
        k_in = np.asarray(k_in, dtype=DTYPE)
        v_in = np.asarray(v_in, dtype=DTYPE)
        squeeze = q_in.ndim == 2
        if squeeze:
            q_in, k_in, v_in = q_in[None], k_in[None], v_in[None]
            if key_mask is not None:
                key_mask = np.asarray(key_mask)[None]
        if q_in.ndim != 3 or k_in.ndim != 3 or v_in.ndim != 3:
            raise ShapeError("attention inputs must be (T, D) or (B, T, D)")
        if k_in.shape[:2] != v_in.shape[:2]:
            raise ShapeError(f"key/value lengths differ: {k_in.shape} vs {v_in.shape}")
        if q_in.shape[0] != k_in.shape[0]:
            raise ShapeError("query and key batch sizes differ")
        for arr in (q_in, k_in, v_in):
            if arr.shape[-1] != self.dim:
                raise ShapeError(f"attention expects width {self.dim}, got {arr.shape[-1]}")

        q, cq = self.q_proj.forward(q_in)
        k, ck = self.k_proj.forward(k_in)
        v, cv = self.v_proj.forward(v_in)
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / np.sqrt(self.dim // self.heads)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        if key_mask is not None:
            scores = np.where(key_mask[:, None, None, :], scores, _MASKED)
        weights = softmax_rows(scores)
        ctx = self._merge(weights @ vh)
        out, co = self.out_proj.forward(ctx)
        if squeeze:
            out = out[0]
        cache = (cq, ck, cv, qh, kh, vh, weights, co, scale, squeeze)
        return out, cache

    def backward(self, grad_out: np.ndarray, cache):
        """Return gradients for (q_in, k_in, v_in)."""
        require_cache(cache)
        cq, ck, cv, qh, kh, vh, weights, co, scale, squeeze = cache
        if squeeze:
            grad_out = grad_out[None]
        g_ctx = self.out_proj.backward(grad_out, co)
        g_heads = self._split(g_ctx)
        g_w = g_heads @ vh.transpose(0, 1, 3, 2)
        g_vh = weights.transpose(0, 1, 3, 2) @ g_heads
        g_scores = weights * (g_w - np.sum(g_w * weights, axis=-1, keepdims=True)) * scale
        g_qh = g_scores @ kh
        g_kh = g_scores.transpose(0, 1, 3, 2) @ qh
        g_q = self.q_proj.backward(self._merge(g_qh), cq)
        g_k = self.k_proj.backward(self._merge(g_kh), ck)
        g_v = self.v_proj.backward(self._merge(g_vh), cv)
        if squeeze:
            return g_q[0], g_k[0], g_v[0]
        return g_q, g_k, g_v

    @staticmethod
    def attention_weights(cache) -> np.ndarray:
        """The ``(B, H, T_q, T_k)`` weight tensor stored by ``forward``."""
        return cache[6]


def multi_head_attention(q_in, k_in, v_in, attn: MultiHeadAttention, key_mask=None) -> np.ndarray:
    out, _ = attn.forward(q_in, k_in, v_in, key_mask)
    return out
