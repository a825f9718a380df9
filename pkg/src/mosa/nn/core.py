"""Parameters, parameter sets and the module base class.

Every differentiable block in this package follows one contract::

    y, cache = block.forward(*inputs)
    grad_inputs = block.backward(grad_y, cache)

``forward`` is pure with respect to the block (intermediates live in the
returned cache, so a block may be applied many times per pass) and
``backward`` accumulates parameter gradients into the block's
:class:`Parameter` objects.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

DTYPE = np.float64


class BackwardError(RuntimeError):
    """Raised when ``backward`` is called without a matching forward pass."""


class ShapeError(ValueError):
    pass


def require_cache(cache) -> None:
    if cache is None:
        raise BackwardError("backward called without a completed forward pass")


class Parameter:
    """A named-by-owner array with a gradient accumulator.

    ``trainable=False`` marks fixed state (e.g. input standardization) that
    is saved with checkpoints but never updated by an optimizer.
    """

    __slots__ = ("value", "grad", "trainable")

    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.value.shape})"


class ParameterSet(Mapping[str, Parameter]):
    """An ordered, named collection of parameters."""

    def __init__(self, items: Optional[Mapping[str, Parameter]] = None):
        self._items: "OrderedDict[str, Parameter]" = OrderedDict(items or {})

    def __getitem__(self, name: str) -> Parameter:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def zero_grad(self) -> None:
        for p in self._items.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._items.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self._items) - set(state)
        extra = set(state) - set(self._items)
        if missing or extra:
            raise ShapeError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in self._items.items():
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != p.value.shape:
                raise ShapeError(f"{name}: shape {value.shape} != expected {p.value.shape}")
            p.value[...] = value

    def trainable(self) -> "ParameterSet":
        return ParameterSet((n, p) for n, p in self._items.items() if p.trainable)

    def num_values(self) -> int:
        return sum(p.value.size for p in self._items.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.value)) for p in self._items.values())


class Module:
    """Base class: discovers parameters and sub-modules from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> ParameterSet:
        return ParameterSet(self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
