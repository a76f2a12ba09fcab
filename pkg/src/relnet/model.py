"""Shared-encoder relation network with main and auxiliary regression heads.

Each sample is a main object ``x`` and ``n`` related objects. One encoder
``e`` maps every object to a representation. A pair function ``g`` scores
``[o, o_i]`` for each related object, the scores are summed elementwise and
passed through ``f``. Two heads ``h`` (main target) and ``h_aux`` (auxiliary
target) read the result. The ``dnn`` and ``dnn_mtl`` variants drop ``g``/``f``
and feed ``e(x)`` straight into the heads; ``dnn`` also has no auxiliary head.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .nn import (
    INFER,
    TRAIN,
    MlpBlock,
    build_mlp,
    check_unique_names,
    frozen_dropout,
    gradient_check,
    l2_penalty,
    read_checkpoint,
    restore_state,
    save_checkpoint,
)
from .nn.layers import check_mode

VARIANTS = ("dnn", "dnn_mtl", "dnn_rn_mtl")
VARIANT_LABELS = {"dnn": "DNN", "dnn_mtl": "DNN+MTL", "dnn_rn_mtl": "DNN+RN+MTL"}
RN_MODES = ("anchored", "all_pairs")

# stable stream ids so a block's initial values do not depend on which other blocks exist
_BLOCK_STREAMS = {"encoder": 0, "relation": 1, "aggregator": 2, "head_main": 3, "head_aux": 4}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_dim: int
    n_related: int = 3
    encoder_depth: int = 15
    encoder_width: int = 64
    repr_dim: int = 32
    relation_depth: int = 3
    relation_width: int = 32
    aggregate_depth: int = 3
    aggregate_width: int = 32
    head_depth: int = 2
    head_width: int = 32
    lambda_aux: float = 1.0
    gamma_l2: float = 1e-4
    dropout_keep: float = 0.9
    variant: str = "dnn_rn_mtl"
    rn_mode: str = "anchored"
    encoder_batchnorm: bool = True
    rn_batchnorm: bool = False
    head_batchnorm: bool = False
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0
    # fixed output affine: prediction = shift + scale * head output
    y_shift: float = 0.0
    y_scale: float = 1.0
    aux_shift: float = 0.0
    aux_scale: float = 1.0

    def validate(self) -> "ModelConfig":
        for name in ("input_dim", "encoder_depth", "encoder_width", "repr_dim", "relation_depth",
                     "relation_width", "aggregate_depth", "aggregate_width", "head_depth", "head_width"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value}")
        if int(self.n_related) != self.n_related or self.n_related < 0:
            raise ConfigError(f"n_related must be a non-negative integer, got {self.n_related}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.rn_mode not in RN_MODES:
            raise ConfigError(f"rn_mode must be one of {RN_MODES}, got {self.rn_mode!r}")
        if self.variant == "dnn_rn_mtl" and self.n_related < 1:
            raise ConfigError("variant dnn_rn_mtl requires n_related >= 1")
        for name in ("lambda_aux", "gamma_l2"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {value}")
        if not 0 < self.dropout_keep <= 1:
            raise ConfigError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}")
        if not (math.isfinite(self.y_scale) and math.isfinite(self.aux_scale)) or self.y_scale == 0 or self.aux_scale == 0:
            raise ConfigError("output scales must be finite and nonzero")
        return self

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RelationalSample:
    """One training example: main features, related-object features and both targets."""

    x: np.ndarray
    related: list
    y: float
    y_aux: float
    series_id: int = -1
    release_day: int = 0
    n_padded: int = 0

    @property
    def x_star(self) -> np.ndarray:
        """The concatenation (x, x_1, ..., x_n)."""
        return np.concatenate([self.x, *self.related]) if self.related else np.asarray(self.x)


@dataclass
class SampleBatch:
    x: np.ndarray  # [B, d]
    related: np.ndarray  # [B, n, d]
    y: np.ndarray  # [B]
    y_aux: np.ndarray  # [B]

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "SampleBatch":
        return SampleBatch(self.x[idx], self.related[idx], self.y[idx], self.y_aux[idx])


def stack_samples(samples) -> SampleBatch:
    """Pack RelationalSamples into dense arrays (all must share n and the feature width)."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot stack an empty sample list")
    x = np.stack([np.asarray(s.x, dtype=np.float64) for s in samples])
    n = len(samples[0].related)
    if any(len(s.related) != n for s in samples):
        raise ValueError("samples disagree on the number of related objects")
    if n:
        related = np.stack([np.stack([np.asarray(r, dtype=np.float64) for r in s.related]) for s in samples])
    else:
        related = np.zeros((len(samples), 0, x.shape[1]))
    y = np.array([s.y for s in samples], dtype=np.float64)
    y_aux = np.array([s.y_aux for s in samples], dtype=np.float64)
    return SampleBatch(x, related, y, y_aux)


def as_batch(data) -> SampleBatch:
    return data if isinstance(data, SampleBatch) else stack_samples(data)


@dataclass
class Prediction:
    y_hat: np.ndarray
    y_aux_hat: np.ndarray | None
    relation_vector: np.ndarray


@dataclass
class LossResult:
    total: float
    main: float
    aux: float
    reg: float
    prediction: Prediction
    token: int = field(default=-1, repr=False)
    lambda_aux: float = 0.0
    residual: np.ndarray | None = field(default=None, repr=False)
    aux_residual: np.ndarray | None = field(default=None, repr=False)

    @property
    def parts(self) -> dict:
        return {"main": self.main, "aux": self.aux, "reg": self.reg}


class DivergenceError(ArithmeticError):
    pass


def sum_in_order(terms):
    """Elementwise sum in index order (fixed association for reproducibility)."""
    total = terms[0].copy()
    for term in terms[1:]:
        total += term
    return total


class RelNetModel:
    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        cfg = config

        def rng(block):
            return np.random.default_rng([cfg.seed, _BLOCK_STREAMS[block]])

        def drop_rng(block):
            return np.random.default_rng([cfg.seed, _BLOCK_STREAMS[block], 1])

        enc_dims = [cfg.input_dim] + [cfg.encoder_width] * (cfg.encoder_depth - 1) + [cfg.repr_dim]
        common = dict(bn_epsilon=cfg.bn_epsilon, bn_momentum=cfg.bn_momentum)
        self.encoder = build_mlp(
            "encoder", enc_dims, rng("encoder"), batchnorm=cfg.encoder_batchnorm,
            activate_last=True, keep_prob=cfg.dropout_keep, dropout_rng=drop_rng("encoder"), **common,
        )
        self.relation: MlpBlock | None = None
        self.aggregator: MlpBlock | None = None
        head_in = cfg.repr_dim
        if cfg.variant == "dnn_rn_mtl":
            rel_dims = [2 * cfg.repr_dim] + [cfg.relation_width] * cfg.relation_depth
            self.relation = build_mlp("relation", rel_dims, rng("relation"), batchnorm=cfg.rn_batchnorm, **common)
            agg_dims = [cfg.relation_width] + [cfg.aggregate_width] * cfg.aggregate_depth
            self.aggregator = build_mlp("aggregator", agg_dims, rng("aggregator"), batchnorm=cfg.rn_batchnorm, **common)
            head_in = cfg.aggregate_width
        head_dims = [head_in] + [cfg.head_width] * (cfg.head_depth - 1) + [1]
        self.head_main = build_mlp("head_main", head_dims, rng("head_main"), batchnorm=cfg.head_batchnorm,
                                   activate_last=False, **common)
        self.head_aux: MlpBlock | None = None
        if cfg.variant != "dnn":
            self.head_aux = build_mlp("head_aux", head_dims, rng("head_aux"), batchnorm=cfg.head_batchnorm,
                                      activate_last=False, **common)
        check_unique_names(self.parameters())
        self._token = 0
        self._ctx = None

    # -- structure -----------------------------------------------------------

    @property
    def blocks(self) -> list[MlpBlock]:
        return [b for b in (self.encoder, self.relation, self.aggregator, self.head_main, self.head_aux) if b is not None]

    @property
    def uses_relations(self) -> bool:
        return self.relation is not None

    def parameters(self):
        return [p for block in self.blocks for p in block.parameters()]

    def param_dict(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def batchnorms(self):
        return [bn for block in self.blocks for bn in block.batchnorms()]

    def layers(self):
        return [layer for block in self.blocks for layer in block.layers]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward pieces ------------------------------------------------------

    def encode_objects(self, batch: SampleBatch, mode=INFER):
        """Encode x and every related object with the one shared encoder.

        All objects go through the encoder as a single stacked batch, so in
        train mode the batch-norm statistics are pooled over them.
        """
        x = np.asarray(batch.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected features of width {self.config.input_dim}, got shape {x.shape}")
        related = np.asarray(batch.related, dtype=np.float64)
        n = related.shape[1] if related.ndim == 3 else 0
        if n and related.shape[2] != self.config.input_dim:
            raise ValueError(f"related features have width {related.shape[2]}, expected {self.config.input_dim}")
        b = x.shape[0]
        stacked = np.concatenate([x] + [related[:, i, :] for i in range(n)], axis=0)
        encoded = self.encoder.forward(stacked, mode)
        o = encoded[:b]
        others = [encoded[(i + 1) * b:(i + 2) * b] for i in range(n)]
        return o, others

    def relation_pair(self, o, o_i, mode=INFER):
        """r_i = g([o, o_i]) for a batch of (o, o_i) rows."""
        if self.relation is None:
            raise ValueError(f"variant {self.config.variant} has no relation function")
        pair = np.concatenate([np.asarray(o), np.asarray(o_i)], axis=1)
        return self.relation.forward(pair, mode)

    def _pairs(self, n_objects: int):
        """Unordered object pairs; the anchored mode pairs the main object (index 0) with each other one."""
        if self.config.rn_mode == "anchored":
            return [(0, i) for i in range(1, n_objects)]
        return list(combinations(range(n_objects), 2))

    def _relate(self, objects, mode):
        """One relation term per pair, all pairs through g as a single stacked batch.

        Anchored pairs are presented as [o, o_i]. All-pairs terms are symmetrized,
        (g([a, b]) + g([b, a])) / 2, so the sum does not depend on object order.
        """
        pairs = self._pairs(len(objects))
        b = objects[0].shape[0]
        ordered = pairs if self.config.rn_mode == "anchored" else pairs + [(j, i) for i, j in pairs]
        stacked = np.concatenate([np.concatenate([objects[i], objects[j]], axis=1) for i, j in ordered], axis=0)
        out = self.relation.forward(stacked, mode)
        rows = [out[k * b:(k + 1) * b] for k in range(len(ordered))]
        if self.config.rn_mode == "anchored":
            return ordered, rows
        half = len(pairs)
        return ordered, [0.5 * (rows[k] + rows[k + half]) for k in range(half)]

    def aggregate_relations(self, r_list, mode=INFER):
        """r = f(sum_i r_i), summed in index order."""
        if self.aggregator is None:
            raise ValueError(f"variant {self.config.variant} has no aggregator")
        if len(r_list) == 0:
            raise ValueError("aggregate_relations needs at least one relation vector")
        return self.aggregator.forward(sum_in_order([np.asarray(r, dtype=np.float64) for r in r_list]), mode)

    def aggregate_all_pairs(self, objects, mode=INFER):
        """f(sum over unordered pairs i<j of the symmetrized relation of o_i and o_j)."""
        if len(objects) < 2:
            raise ValueError("all-pairs aggregation needs at least 2 objects")
        if self.relation is None:
            raise ValueError(f"variant {self.config.variant} has no relation function")
        terms = [
            0.5 * (self.relation_pair(objects[i], objects[j], mode) + self.relation_pair(objects[j], objects[i], mode))
            for i, j in combinations(range(len(objects)), 2)
        ]
        return self.aggregate_relations(terms, mode)

    def forward(self, data, mode=INFER) -> Prediction:
        mode = check_mode(mode)
        batch = as_batch(data)
        if len(batch) == 0:
            raise ValueError("forward needs a nonempty batch")
        cfg = self.config
        ctx = {"batch_size": len(batch)}
        if self.uses_relations:
            if batch.related.shape[1] != cfg.n_related:
                raise ValueError(f"expected {cfg.n_related} related objects, got {batch.related.shape[1]}")
            o, others = self.encode_objects(batch, mode)
            objects = [o] + others
            ordered, terms = self._relate(objects, mode)
            r = self.aggregator.forward(sum_in_order(terms), mode)
            ctx.update(n_objects=len(objects), ordered=ordered)
        else:
            r = self.encoder.forward(self._main_features(batch), mode)
        y_hat = cfg.y_shift + cfg.y_scale * self.head_main.forward(r, mode)[:, 0]
        y_aux_hat = None
        if self.head_aux is not None:
            y_aux_hat = cfg.aux_shift + cfg.aux_scale * self.head_aux.forward(r, mode)[:, 0]
        if mode == TRAIN:
            self._token += 1
            self._ctx = dict(ctx, token=self._token)
        return Prediction(y_hat, y_aux_hat, r)

    def _main_features(self, batch):
        x = np.asarray(batch.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected features of width {self.config.input_dim}, got shape {x.shape}")
        return x

    def predict(self, data) -> Prediction:
        return self.forward(data, INFER)

    # -- objective -----------------------------------------------------------

    def loss(self, data, mode=TRAIN, reg_weight: float | None = None) -> LossResult:
        """Sum of squared main errors + lambda * auxiliary squared errors + gamma * ||W||^2.

        Sums run over the batch. ``reg_weight`` overrides gamma (mini-batches
        carry their share of the dataset-level penalty).
        """
        batch = as_batch(data)
        pred = self.forward(batch, mode)
        residual = pred.y_hat - batch.y
        main = float(residual @ residual)
        aux = 0.0
        aux_residual = None
        if pred.y_aux_hat is not None:
            aux_residual = pred.y_aux_hat - batch.y_aux
            aux = float(aux_residual @ aux_residual)
        lam = self.config.lambda_aux if self.head_aux is not None else 0.0
        gamma = self.config.gamma_l2 if reg_weight is None else reg_weight
        reg = l2_penalty(self.parameters(), gamma)
        total = main + lam * aux + reg
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss {total}")
        token = self._token if mode == TRAIN else -1
        return LossResult(total, main, aux, reg, pred, token, lam, residual, aux_residual)

    def backward(self, result: LossResult) -> None:
        """Accumulate gradients of the data terms (main + lambda * aux) into every tensor.

        The l2 term's gradient is added by the optimizer step.
        """
        if result.token < 0 or self._ctx is None or result.token != self._ctx["token"]:
            raise RuntimeError("backward needs the most recent train-mode loss() result (stale or missing cache)")
        cfg = self.config
        d_main = (2.0 * cfg.y_scale * result.residual)[:, None]
        d_r = self.head_main.backward(d_main)
        if self.head_aux is not None:
            d_aux = (2.0 * result.lambda_aux * cfg.aux_scale * result.aux_residual)[:, None]
            d_r = d_r + self.head_aux.backward(d_aux)
        if not self.uses_relations:
            self.encoder.backward(d_r)
            self._ctx = None
            return
        d_sum = self.aggregator.backward(d_r)
        ordered = self._ctx["ordered"]
        n_objects = self._ctx["n_objects"]
        b = self._ctx["batch_size"]
        d_row = d_sum if self.config.rn_mode == "anchored" else 0.5 * d_sum
        d_pairs = self.relation.backward(np.concatenate([d_row] * len(ordered), axis=0))
        rd = self.config.repr_dim
        d_objects = [np.zeros((b, rd)) for _ in range(n_objects)]
        for k, (i, j) in enumerate(ordered):
            rows = d_pairs[k * b:(k + 1) * b]
            d_objects[i] += rows[:, :rd]
            d_objects[j] += rows[:, rd:]
        self.encoder.backward(np.concatenate(d_objects, axis=0))
        self._ctx = None

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.config.to_dict(), self.parameters(), self.batchnorms(), extra)

    @classmethod
    def load(cls, path) -> "RelNetModel":
        doc = read_checkpoint(path)
        model = cls(ModelConfig.from_dict(doc["config"]))
        restore_state(doc, model.parameters(), model.batchnorms())
        return model


def build_variant(config: ModelConfig) -> RelNetModel:
    return RelNetModel(config)


def jitter_offsets(model, seed: int = 0, scale: float = 0.1) -> None:
    """Move biases and batch-norm shifts off exact zero.

    Zero-initialized offsets can put pre-activations exactly on a ReLU kink,
    where a central difference is meaningless; gradient checks jitter first.
    """
    rng = np.random.default_rng([seed, 99])
    for p in model.parameters():
        if p.name.endswith(".b") or p.name.endswith(".beta"):
            p.values += rng.normal(0.0, scale, size=p.shape)


def check_model_gradients(model: RelNetModel, data, step=1e-5, tolerance=1e-4, max_coords=None, seed=0):
    """Finite-difference check of the full objective (data terms + l2) on one batch.

    Batch norm runs in train mode on the fixed batch and dropout masks are
    frozen after one initial draw, so the objective is deterministic.
    """
    batch = as_batch(data)
    params = model.parameters()
    model.forward(batch, TRAIN)
    saved = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in model.batchnorms()]

    def objective(compute_grad):
        result = model.loss(batch, TRAIN)
        if compute_grad:
            model.zero_grad()
            model.backward(result)
            for p in params:
                if p.penalized and model.config.gamma_l2:
                    p.grads += 2.0 * model.config.gamma_l2 * p.values
        return result.total

    try:
        with frozen_dropout(model.layers()):
            return gradient_check(objective, params, step, tolerance, max_coords, seed)
    except ArithmeticError as exc:
        from .nn import GradCheckReport

        return GradCheckReport(tolerance=tolerance, message=str(exc))
    finally:
        for bn, (mean, var) in zip(model.batchnorms(), saved):
            bn.running_mean, bn.running_var = mean, var
        model.zero_grad()
