"""Gradient-check suite over every layer type and the composed model."""

from __future__ import annotations

import numpy as np

from .model import ModelConfig, SampleBatch, build_variant, check_model_gradients, jitter_offsets
from .nn import BatchNorm, Dense, Dropout, ReLU, build_mlp
from .nn.gradcheck import check_layer

LAYER_CHECKS = ("dense", "relu", "batchnorm", "dropout", "mlp", "model")


def tiny_model_config(variant="dnn_rn_mtl", rn_mode="anchored", seed=0) -> ModelConfig:
    return ModelConfig(
        input_dim=6, n_related=2, encoder_depth=3, encoder_width=8, repr_dim=4,
        relation_depth=3, relation_width=6, aggregate_depth=3, aggregate_width=5,
        head_depth=2, head_width=4, lambda_aux=0.7, gamma_l2=0.01, dropout_keep=0.8,
        variant=variant, rn_mode=rn_mode, seed=seed,
    )


def random_batch(config: ModelConfig, size=4, seed=0) -> SampleBatch:
    rng = np.random.default_rng([seed, 11])
    d, n = config.input_dim, config.n_related
    return SampleBatch(rng.normal(size=(size, d)), rng.normal(size=(size, n, d)), rng.normal(size=size), rng.normal(size=size))


def run_suite(which="all", step=1e-5, tolerance=1e-4, seed=0) -> dict:
    """Return {check name: GradCheckReport} for the selected layer type (or all)."""
    if which != "all" and which not in LAYER_CHECKS:
        raise ValueError(f"layer must be 'all' or one of {LAYER_CHECKS}, got {which!r}")
    rng = np.random.default_rng([seed, 3])
    x = rng.normal(size=(4, 5))
    builders = {
        "dense": lambda: Dense("dense", 5, 3, np.random.default_rng([seed, 1])),
        "relu": lambda: ReLU("relu"),
        "batchnorm": lambda: _jittered_bn(seed),
        "dropout": lambda: Dropout("dropout", 0.7, np.random.default_rng([seed, 2])),
        "mlp": lambda: build_mlp("mlp", [5, 7, 6, 3], np.random.default_rng([seed, 4]), batchnorm=True,
                                 keep_prob=0.8, dropout_rng=np.random.default_rng([seed, 6])),
    }
    reports = {}
    for name, make in builders.items():
        if which in ("all", name):
            reports[name] = check_layer(make(), x, step, tolerance, seed)
    if which in ("all", "model"):
        for mode in ("anchored", "all_pairs"):
            model = build_variant(tiny_model_config(rn_mode=mode, seed=seed))
            jitter_offsets(model, seed)
            reports[f"model[{mode}]"] = check_model_gradients(model, random_batch(model.config, 4, seed), step, tolerance)
    return reports


def _jittered_bn(seed):
    bn = BatchNorm("batchnorm", 5)
    rng = np.random.default_rng([seed, 8])
    bn.gamma.values += rng.normal(0, 0.3, size=5)
    bn.beta.values += rng.normal(0, 0.3, size=5)
    return bn
