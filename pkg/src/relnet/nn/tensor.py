"""Trainable parameter storage and initialization."""

from __future__ import annotations

import math

import numpy as np


class ParamTensor:
    """A named float64 array paired with a gradient buffer of the same shape.

    ``penalized`` marks tensors that enter the l2 penalty (dense weights only).
    """

    def __init__(self, name: str, values: np.ndarray, penalized: bool = False):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 0 or any(d <= 0 for d in values.shape):
            raise ValueError(f"{name}: shape must have positive extents, got {values.shape}")
        self.name = name
        self.values = values
        self.grads = np.zeros_like(values)
        self.penalized = penalized

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grads[...] = 0.0

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={list(self.shape)})"


def he_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean normal draws with std sqrt(2 / fan_in), fan_in = shape[0]."""
    shape = tuple(int(s) for s in shape)
    fan_in = shape[0]
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def check_unique_names(params) -> None:
    seen = set()
    for p in params:
        if p.name in seen:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)


def l2_penalty(params, gamma: float) -> float:
    """gamma * sum of squares over the penalized tensors."""
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if gamma == 0:
        return 0.0
    total = 0.0
    for p in params:
        if p.penalized:
            total += float(np.sum(p.values * p.values))
    return gamma * total


def add_l2_grad(params, gamma: float) -> None:
    """Accumulate 2*gamma*theta into the grads of penalized tensors."""
    if gamma == 0:
        return
    for p in params:
        if p.penalized:
            p.grads += 2.0 * gamma * p.values
