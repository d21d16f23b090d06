"""Trainable parameter container and initialization helpers.

All kernel math runs in float64: the finite-difference tolerances used to
verify every backward pass are unreachable in single precision.
"""

from __future__ import annotations

import numpy as np


class Param:
    """A dense value array paired with a same-shape gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param({self.name or 'unnamed'}, shape={self.value.shape})"


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in); the standard stable recurrent init."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)
