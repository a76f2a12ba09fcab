"""Mini-batch momentum training, R^2 evaluation and the three-arm ablation."""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .market import MarketDataset, TargetScaling, build_relational_dataset, temporal_split
from .model import (
    INFER,
    TRAIN,
    VARIANT_LABELS,
    VARIANTS,
    DivergenceError,
    ModelConfig,
    RelNetModel,
    as_batch,
    build_variant,
    stack_samples,
)
from .nn import MomentumOptimizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 3e-5
    momentum_coeff: float = 0.9
    seed: int = 0
    shuffle: bool = True
    divergence_threshold: float = 1e12

    def validate(self) -> "TrainConfig":
        if self.epochs <= 0:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be a finite non-negative number, got {self.learning_rate}")
        if not 0 <= self.momentum_coeff < 1:
            raise ValueError(f"momentum_coeff must lie in [0, 1), got {self.momentum_coeff}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainReport:
    total: list = field(default_factory=list)
    main: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    reg: list = field(default_factory=list)
    seed: int = 0
    diverged: bool = False
    divergence_epoch: int | None = None
    seconds: float = 0.0
    checkpoint: str | None = None

    def to_dict(self, wall_clock: bool = True) -> dict:
        d = dataclasses.asdict(self)
        for key in ("total", "main", "aux", "reg"):
            # JSON has no inf/nan; a diverged epoch is recorded as null
            d[key] = [v if math.isfinite(v) else None for v in d[key]]
        if not wall_clock:
            d.pop("seconds")
        return d


@dataclass
class EvalReport:
    r_squared: float
    mae: float
    n_samples: int
    variant: str
    prediction_day_offset: int = 7

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def r_squared(y, y_hat) -> float:
    """1 - SS_res / SS_tot around the mean of ``y``."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size < 2:
        raise ValueError("R^2 needs at least 2 samples")
    resid = y - y_hat
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for a constant target")
    return 1.0 - float(resid @ resid) / ss_tot


def minibatch_iter(n_samples: int, batch_size: int, rng: np.random.Generator | None, min_batch: int = 1):
    """Index arrays covering range(n_samples) once, shuffled when ``rng`` is given.

    A trailing batch smaller than ``min_batch`` is folded into the previous one.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n_samples) if rng is not None else np.arange(n_samples)
    batches = [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_batch:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def train(model: RelNetModel, samples, config: TrainConfig) -> TrainReport:
    """Shuffled mini-batch momentum descent on the joint loss.

    Each batch carries the share |batch| / |dataset| of the l2 penalty, so an
    epoch's summed objective equals the full-dataset loss.
    """
    config.validate()
    data = as_batch(samples)
    n = len(data)
    if n == 0:
        raise ValueError("no training samples")
    has_bn = bool(model.batchnorms())
    if has_bn and min(config.batch_size, n) < 2:
        raise ValueError("batch norm training needs batch_size >= 2 and at least 2 samples")
    rng = np.random.default_rng([config.seed, 7])
    opt = MomentumOptimizer(model.parameters(), config.learning_rate, config.momentum_coeff)
    gamma = model.config.gamma_l2
    report = TrainReport(seed=config.seed)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        sums = np.zeros(4)
        batches = minibatch_iter(n, config.batch_size, rng if config.shuffle else None, 2 if has_bn else 1)
        try:
            for idx in batches:
                share = gamma * len(idx) / n
                result = model.loss(data.take(idx), TRAIN, reg_weight=share)
                model.backward(result)
                opt.step(share)
                sums += (result.total, result.main, result.aux, result.reg)
        except DivergenceError:
            sums[:] = math.inf
        for series, value in zip((report.total, report.main, report.aux, report.reg), sums):
            series.append(float(value))
        if not math.isfinite(sums[0]) or sums[0] > config.divergence_threshold:
            report.diverged = True
            report.divergence_epoch = epoch
            log.warning("training diverged at epoch %d (loss %s)", epoch, sums[0])
            break
    report.seconds = time.perf_counter() - start
    _monitor_descent(report.total)
    return report


def _monitor_descent(losses, fraction=0.9) -> None:
    if len(losses) < 3:
        return
    steps = np.diff(losses)
    ok = float(np.mean(steps <= 0))
    if ok < fraction:
        log.warning("training loss decreased in only %.0f%% of epoch transitions", 100 * ok)


def evaluate_r2(model: RelNetModel, samples, prediction_day_offset: int = 7) -> EvalReport:
    """R^2 and MAE of the main head in inference mode."""
    data = as_batch(samples)
    pred = model.forward(data, INFER)
    return EvalReport(
        r_squared=r_squared(data.y, pred.y_hat),
        mae=float(np.mean(np.abs(data.y - pred.y_hat))),
        n_samples=len(data),
        variant=model.config.variant,
        prediction_day_offset=prediction_day_offset,
    )


# -- ablation --------------------------------------------------------------------


@dataclass
class SplitData:
    train: list
    test: list
    scaling: TargetScaling


def prepare_split(dataset: MarketDataset, n_related: int, split_day: int, offset_days: int = 7) -> SplitData:
    samples = build_relational_dataset(dataset, n_related, offset_days)
    train_s, test_s = temporal_split(samples, split_day)
    return SplitData(train_s, test_s, TargetScaling.fit(train_s))


def train_and_evaluate(config: ModelConfig, split: SplitData, train_config: TrainConfig, offset_days: int = 7):
    model = build_variant(config.replace(**split.scaling.model_overrides()))
    report = train(model, split.train, train_config)
    if report.diverged:
        return model, report, None
    return model, report, evaluate_r2(model, split.test, offset_days)


@dataclass
class AblationReport:
    variants: list
    seeds: list
    offsets: list
    cells: list  # {"offset", "seed", "variant", "eval" | None, "diverged", "final_loss"}
    summary: dict  # offset -> variant -> {"mean", "std", "n"}
    deltas: dict  # offset -> {"mtl": ..., "rn": ...}
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "variants": self.variants,
            "seeds": self.seeds,
            "offsets": self.offsets,
            "cells": self.cells,
            "summary": {str(k): v for k, v in self.summary.items()},
            "deltas": {str(k): v for k, v in self.deltas.items()},
            "config": self.config,
            "warnings": self.warnings,
        }

    def mean_r2(self, variant: str, offset: int | None = None) -> float:
        offset = self.offsets[0] if offset is None else offset
        return self.summary[offset][variant]["mean"]


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("RELNET_THREADS", "1")))
    except ValueError:
        return 1


def run_ablation(
    dataset: MarketDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds,
    split_day: int,
    offsets=(7,),
    variants=VARIANTS,
) -> AblationReport:
    """Train every variant for every seed on one temporal split and compare test R^2.

    Within a seed all arms share the init seed (so shared blocks start from
    identical values) and the training shuffle seed.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_ablation needs at least one seed")
    variants = list(variants)
    offsets = list(offsets)
    splits = {off: prepare_split(dataset, model_config.n_related, split_day, off) for off in offsets}
    jobs = [(off, seed, v) for off in offsets for seed in seeds for v in variants]

    def run(job):
        off, seed, variant = job
        cfg = model_config.replace(variant=variant, seed=seed)
        tcfg = dataclasses.replace(train_config, seed=seed)
        _, rep, ev = train_and_evaluate(cfg, splits[off], tcfg, off)
        return {
            "offset": off,
            "seed": seed,
            "variant": variant,
            "eval": ev.to_dict() if ev else None,
            "diverged": rep.diverged,
            "final_loss": rep.total[-1] if rep.total else None,
        }

    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(run, jobs))
    else:
        cells = [run(job) for job in jobs]

    warnings = []
    summary, deltas = {}, {}
    for off in offsets:
        summary[off] = {}
        for slot, variant in enumerate(variants):
            # duplicate variant names get their own slot
            key = variant if variants.index(variant) == slot else f"{variant}#{slot}"
            vals = [
                c["eval"]["r_squared"]
                for c in cells[slot::len(variants)]
                if c["offset"] == off and c["eval"] is not None
            ]
            failed = sum(1 for c in cells[slot::len(variants)] if c["offset"] == off and c["eval"] is None)
            if failed:
                warnings.append(f"{variant} at offset {off}: {failed} seed(s) diverged; averaged over survivors")
            summary[off][key] = {
                "mean": float(np.mean(vals)) if vals else None,
                "std": float(np.std(vals)) if vals else None,
                "n": len(vals),
            }
        deltas[off] = _deltas(summary[off])
    for w in warnings:
        log.warning(w)
    return AblationReport(variants, seeds, offsets, cells, summary, deltas, warnings=warnings)


def _deltas(row: dict) -> dict:
    def diff(a, b):
        if a in row and b in row and row[a]["mean"] is not None and row[b]["mean"] is not None:
            return row[a]["mean"] - row[b]["mean"]
        return None

    return {"mtl": diff("dnn_mtl", "dnn"), "rn": diff("dnn_rn_mtl", "dnn_mtl")}


def render_table(report: AblationReport) -> str:
    """Plain-text grid: one row per prediction offset, one column per variant, then deltas."""
    keys = list(report.summary[report.offsets[0]].keys())
    labels = [VARIANT_LABELS.get(k.split("#")[0], k) for k in keys]
    width = max(18, *(len(label) + 2 for label in labels))
    lines = ["mean test R^2 over seeds " + ",".join(str(s) for s in report.seeds)]
    lines.append(f"{'':<10}" + "".join(f"{label:>{width}}" for label in labels))
    for off in report.offsets:
        row = report.summary[off]
        cells = []
        for k in keys:
            m, sd = row[k]["mean"], row[k]["std"]
            text = "diverged" if m is None else f"{m:.4f} ± {sd:.4f}"
            cells.append(f"{text:>{width}}")
        lines.append(f"{str(off) + ' days':<10}" + "".join(cells))
    lines.append("")
    for off in report.offsets:
        d = report.deltas[off]
        parts = []
        for name, label in (("mtl", "DNN+MTL - DNN"), ("rn", "DNN+RN+MTL - DNN+MTL")):
            value = "n/a" if d[name] is None else f"{d[name]:+.4f}"
            parts.append(f"{label}: {value}")
        lines.append(f"{str(off) + ' days':<10}" + "   ".join(parts))
    return "\n".join(lines) + "\n"
