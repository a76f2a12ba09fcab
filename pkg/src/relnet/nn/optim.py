from __future__ import annotations

import numpy as np

from .tensor import add_l2_grad


class MomentumOptimizer:
    """Classical momentum: v <- mu * v - lr * grad, theta <- theta + v."""

    def __init__(self, params, learning_rate: float, momentum_coeff: float = 0.9):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= momentum_coeff < 1:
            raise ValueError("momentum_coeff must lie in [0, 1)")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum_coeff = momentum_coeff
        self.velocity = {p.name: np.zeros_like(p.values) for p in self.params}

    def step(self, l2_gamma: float = 0.0) -> None:
        """Apply one update, adding the 2*gamma*theta penalty gradient first, then zero grads."""
        add_l2_grad(self.params, l2_gamma)
        for p in self.params:
            v = self.velocity[p.name]
            if v.shape != p.values.shape:
                raise ValueError(f"velocity shape {v.shape} does not match {p.name} {p.values.shape}")
            v *= self.momentum_coeff
            v -= self.learning_rate * p.grads
            p.values += v
            p.zero_grad()


def momentum_step(opt: MomentumOptimizer, l2_gamma: float = 0.0) -> None:
    opt.step(l2_gamma)
