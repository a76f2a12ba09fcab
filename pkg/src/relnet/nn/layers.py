"""Dense, ReLU, batch-norm and dropout layers with hand-written backward passes.

Every layer maps a [batch, features] float64 matrix to another. Forward in
``"train"`` mode caches what backward needs; ``"infer"`` mode caches nothing
and mutates nothing, so inference is safe to call concurrently.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .tensor import ParamTensor, he_init

TRAIN = "train"
INFER = "infer"
MODES = (TRAIN, INFER)


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _as_batch(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name}: expected a [batch, features] matrix, got shape {x.shape}")
    return x


class Layer:
    name = "layer"

    def forward(self, x, mode: str = TRAIN) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[ParamTensor]:
        return []

    def _require_cache(self, cache):
        if cache is None:
            raise RuntimeError(f"{self.name}: backward called without a train-mode forward")
        return cache


class Dense(Layer):
    """Affine map ``x @ W + b`` with W stored as [in_dim, out_dim].

    ``use_bias=False`` drops b (used ahead of batch norm, whose beta takes its role).
    """

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 use_bias: bool = True):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError(f"{name}: dims must be positive, got {in_dim}x{out_dim}")
        self.name = name
        w = he_init((in_dim, out_dim), rng) if rng is not None else np.zeros((in_dim, out_dim))
        self.weights = ParamTensor(f"{name}.W", w, penalized=True)
        self.bias = ParamTensor(f"{name}.b", np.zeros(out_dim)) if use_bias else None
        self._x = None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x, mode=TRAIN):
        x = _as_batch(x, self.name)
        if x.shape[1] != self.in_dim:
            raise ValueError(f"{self.name}: expected input width {self.in_dim}, got {x.shape[1]}")
        if check_mode(mode) == TRAIN:
            self._x = x
        out = x @ self.weights.values
        if self.bias is not None:
            out += self.bias.values
        return out

    def backward(self, dy):
        x = self._require_cache(self._x)
        self.weights.grads += x.T @ dy
        if self.bias is not None:
            self.bias.grads += dy.sum(axis=0)
        return dy @ self.weights.values.T

    def parameters(self):
        return [self.weights] if self.bias is None else [self.weights, self.bias]


class ReLU(Layer):
    """max(0, v); the subgradient at exactly 0 is taken as 0."""

    def __init__(self, name: str = "relu"):
        self.name = name
        self._active = None

    def forward(self, x, mode=TRAIN):
        x = _as_batch(x, self.name)
        if check_mode(mode) == TRAIN:
            self._active = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy):
        active = self._require_cache(self._active)
        return np.where(active, dy, 0.0)


class BatchNorm(Layer):
    """Per-feature batch normalization.

    Running statistics follow ``running <- (1 - m) * running + m * batch_stat``
    with m = ``stat_momentum``; the variance is the biased batch variance.
    """

    def __init__(self, name: str, dim: int, epsilon: float = 1e-5, stat_momentum: float = 0.1):
        if epsilon <= 0:
            raise ValueError(f"{name}: epsilon must be positive")
        if not 0 < stat_momentum < 1:
            raise ValueError(f"{name}: stat_momentum must lie in (0, 1)")
        self.name = name
        self.gamma = ParamTensor(f"{name}.gamma", np.ones(dim))
        self.beta = ParamTensor(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.epsilon = epsilon
        self.stat_momentum = stat_momentum
        self._cache = None

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def forward(self, x, mode=TRAIN):
        x = _as_batch(x, self.name)
        if x.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected input width {self.dim}, got {x.shape[1]}")
        if check_mode(mode) == INFER:
            x_hat = (x - self.running_mean) / np.sqrt(self.running_var + self.epsilon)
            return self.gamma.values * x_hat + self.beta.values
        if x.shape[0] < 2:
            raise ValueError(f"{self.name}: train-mode batch norm needs batch size >= 2, got {x.shape[0]}")
        mean = x.mean(axis=0)
        centered = x - mean
        var = np.mean(centered * centered, axis=0)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = centered * inv_std
        m = self.stat_momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * var
        self._cache = (x_hat, inv_std)
        return self.gamma.values * x_hat + self.beta.values

    def backward(self, dy):
        x_hat, inv_std = self._require_cache(self._cache)
        batch = dy.shape[0]
        self.gamma.grads += np.sum(dy * x_hat, axis=0)
        self.beta.grads += dy.sum(axis=0)
        dx_hat = dy * self.gamma.values
        return (inv_std / batch) * (
            batch * dx_hat - dx_hat.sum(axis=0) - x_hat * np.sum(dx_hat * x_hat, axis=0)
        )

    def parameters(self):
        return [self.gamma, self.beta]


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/keep_prob at train time."""

    def __init__(self, name: str, keep_prob: float, rng: np.random.Generator):
        if not 0 < keep_prob <= 1:
            raise ValueError(f"{name}: keep_prob must lie in (0, 1], got {keep_prob}")
        self.name = name
        self.keep_prob = keep_prob
        self.rng = rng
        self.frozen = False
        self._mask = None

    def forward(self, x, mode=TRAIN):
        x = _as_batch(x, self.name)
        if check_mode(mode) == INFER or self.keep_prob == 1.0:
            if mode == TRAIN:
                self._mask = np.ones_like(x)
            return x
        if not (self.frozen and self._mask is not None and self._mask.shape == x.shape):
            self._mask = (self.rng.random(x.shape) < self.keep_prob) / self.keep_prob
        return x * self._mask

    def backward(self, dy):
        return dy * self._require_cache(self._mask)


@contextlib.contextmanager
def frozen_dropout(layers):
    """Reuse each dropout layer's last mask instead of drawing new ones."""
    drops = [layer for layer in layers if isinstance(layer, Dropout)]
    previous = [d.frozen for d in drops]
    for d in drops:
        d.frozen = True
    try:
        yield
    finally:
        for d, flag in zip(drops, previous):
            d.frozen = flag
