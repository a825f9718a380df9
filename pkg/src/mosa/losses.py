"""Frequency-weighted focal relation loss, object cross-entropy, total loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .nn.layers import sigmoid, softmax_rows

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    weighting: bool = True
    # "predicate": alpha of the predicate each binary term scores.
    # "sample": alpha of the sample's ground-truth predicate on every term of its row.
    weight_mode: str = "predicate"
    object_loss: Optional[bool] = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError("focal gamma must be finite and >= 0")
        if self.weight_mode not in ("predicate", "sample"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")

    def object_loss_enabled(self, task: str) -> bool:
        if self.object_loss is not None:
            return self.object_loss
        return task != "predcls"


def category_weights(frequencies: Sequence[float]) -> np.ndarray:
    """Per-predicate weights ``(1/log n_r)`` normalized to mean one."""
    n = np.asarray(frequencies, dtype=np.float64)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("frequencies must be a non-empty vector")
    if np.any(n < 2):
        raise ValueError("every frequency must be >= 2 so that log n > 0")
    inv = 1.0 / np.log(n)
    return inv / inv.mean()


def row_weights(alpha: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample weight: alpha of the rarest positive label, 1 for rows without positives."""
    masked = np.where(targets > 0.5, alpha[None, :], -np.inf)
    best = masked.max(axis=1)
    return np.where(np.isfinite(best), best, 1.0)


def relation_loss(
    probs: np.ndarray,
    targets: np.ndarray,
    alpha: Optional[np.ndarray] = None,
    gamma: float = 2.0,
    weight_mode: str = "predicate",
) -> Tuple[float, np.ndarray]:
    """Mean weighted focal BCE over all (sample, predicate) terms.

    Returns the loss and its gradient with respect to the logits that
    produced ``probs``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if probs.shape != y.shape or probs.ndim != 2:
        raise ValueError(f"probabilities {probs.shape} and targets {y.shape} must be equal 2-d shapes")
    if probs.size == 0:
        return 0.0, np.zeros_like(probs)
    nr = probs.shape[1]
    if alpha is None:
        w = np.ones_like(probs)
    else:
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (nr,):
            raise ValueError(f"weights {alpha.shape} do not match {nr} predicates")
        if weight_mode == "predicate":
            w = np.broadcast_to(alpha, probs.shape)
        else:
            w = np.broadcast_to(row_weights(alpha, y)[:, None], probs.shape)

    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    pt = np.where(y > 0.5, p, 1.0 - p)
    one_minus = 1.0 - pt
    ce = -np.log(pt)
    mod = one_minus**gamma
    terms = w * mod * ce
    loss = float(terms.mean())

    if gamma > 0:
        d_pt = w * (-gamma * one_minus ** (gamma - 1.0) * ce - mod / pt)
    else:
        d_pt = w * (-1.0 / pt)
    # d pt / d logit = (2y - 1) * pt * (1 - pt)
    sign = np.where(y > 0.5, 1.0, -1.0)
    grad = d_pt * sign * pt * one_minus / probs.size
    return loss, grad


def relation_loss_from_logits(logits, targets, alpha=None, gamma=2.0, weight_mode="predicate"):
    return relation_loss(sigmoid(logits), targets, alpha, gamma, weight_mode)


def object_loss(logits: np.ndarray, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, c = logits.shape
    if n == 0:
        return 0.0, np.zeros_like(logits)
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label index outside [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    grad = softmax_rows(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def total_loss(obj: float, rel: float) -> float:
    return obj + rel
