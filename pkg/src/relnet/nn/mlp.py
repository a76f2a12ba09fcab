from __future__ import annotations

import numpy as np

from .layers import TRAIN, BatchNorm, Dense, Dropout, Layer, ReLU
from .tensor import check_unique_names


class MlpBlock:
    """Sequential stack of layers; each unit is dense -> [batchnorm] -> [relu] -> [dropout]."""

    def __init__(self, name: str, layers: list[Layer]):
        self.name = name
        self.layers = list(layers)
        width = None
        for layer in self.layers:
            if isinstance(layer, Dense):
                if width is not None and layer.in_dim != width:
                    raise ValueError(
                        f"{name}: {layer.name} expects width {layer.in_dim} but previous layer gives {width}"
                    )
                width = layer.out_dim
            elif isinstance(layer, BatchNorm) and width is not None and layer.dim != width:
                raise ValueError(f"{name}: {layer.name} width {layer.dim} does not match {width}")
        check_unique_names(self.parameters())
        self._forwarded = False

    @property
    def dense_layers(self) -> list[Dense]:
        return [layer for layer in self.layers if isinstance(layer, Dense)]

    @property
    def in_dim(self) -> int:
        return self.dense_layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.dense_layers[-1].out_dim

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def batchnorms(self) -> list[BatchNorm]:
        return [layer for layer in self.layers if isinstance(layer, BatchNorm)]

    def forward(self, x, mode=TRAIN):
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x, mode)
        if mode == TRAIN:
            self._forwarded = True
        return x

    def backward(self, upstream):
        if not self._forwarded:
            raise RuntimeError(f"{self.name}: backward called without a train-mode forward")
        grad = np.asarray(upstream, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    __call__ = forward


def build_mlp(
    name: str,
    dims: list[int],
    rng: np.random.Generator,
    *,
    batchnorm: bool = False,
    activate_last: bool = True,
    keep_prob: float = 1.0,
    dropout_rng: np.random.Generator | None = None,
    bn_epsilon: float = 1e-5,
    bn_momentum: float = 0.1,
) -> MlpBlock:
    """Build a block mapping dims[0] -> dims[-1] through len(dims) - 1 dense layers.

    The last unit gets batch norm, ReLU and dropout only when ``activate_last``.
    """
    if len(dims) < 2:
        raise ValueError(f"{name}: need at least an input and an output width")
    layers: list[Layer] = []
    n_units = len(dims) - 1
    for k in range(n_units):
        prefix = f"{name}.{k}"
        last = k == n_units - 1
        layers.append(Dense(f"{prefix}.dense", dims[k], dims[k + 1], rng,
                            use_bias=not batchnorm or (last and not activate_last)))
        if last and not activate_last:
            break
        if batchnorm:
            layers.append(BatchNorm(f"{prefix}.bn", dims[k + 1], bn_epsilon, bn_momentum))
        layers.append(ReLU(f"{prefix}.relu"))
        if keep_prob < 1.0:
            if dropout_rng is None:
                raise ValueError(f"{name}: dropout needs a random stream")
            layers.append(Dropout(f"{prefix}.dropout", keep_prob, dropout_rng))
    return MlpBlock(name, layers)
