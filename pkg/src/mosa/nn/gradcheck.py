"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Dict, Mapping

import numpy as np


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        up = f()
        x[idx] = orig - step
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)``.

    The floor keeps gradients that vanish identically (e.g. attention key
    biases) from reporting a ratio of two rounding residues.
    """
    num = np.linalg.norm(analytic - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(num / max(den, floor))


def check_gradients(
    loss_fn: Callable[[], float],
    tensors: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    step: float = 1e-4,
) -> Dict[str, float]:
    """Relative error per named tensor between analytic and numeric gradients.

    ``loss_fn`` must read the arrays in ``tensors`` by reference.
    """
    errors = {}
    for name, x in tensors.items():
        numeric = numerical_gradient(loss_fn, x, step)
        errors[name] = relative_error(np.asarray(analytic[name]), numeric)
    return errors
