"""End-to-end acceptance checks; each records one pass/fail line in the terminal summary."""

import json
import math
import time

import numpy as np
import pytest

from relnet.cli import main
from relnet.diagnostics import random_batch, tiny_model_config
from relnet.market import (
    GeneratorConfig,
    TargetScaling,
    dumps_dataset,
    generate_market,
    load_dataset,
    save_dataset,
)
from relnet.model import INFER, TRAIN, ModelConfig, RelNetModel, SampleBatch, build_variant
from relnet.training import TrainConfig, evaluate_r2, prepare_split, r_squared, run_ablation, train


def test_1_gradient_fidelity(acceptance, capsys):
    start = time.perf_counter()
    code = main(["gradcheck", "--tolerance", "1e-4", "--step", "1e-5"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    worst = out.strip().splitlines()[-1]
    ok = code == 0 and elapsed < 60 and "model[anchored]" in out and "model[all_pairs]" in out
    acceptance(1, ok, f"{worst}; {elapsed:.1f}s")
    assert ok, out


def _relative_change(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


def test_2_permutation_invariance(acceptance):
    worst_anchored = worst_pairs = 0.0
    for seed in range(100):
        rng = np.random.default_rng([seed, 99])
        base = tiny_model_config(seed=seed).replace(n_related=3)
        batch = random_batch(base, size=4, seed=seed)

        model = build_variant(base)
        perm = rng.permutation(3)
        shuffled = SampleBatch(batch.x, batch.related[:, perm], batch.y, batch.y_aux)
        worst_anchored = max(worst_anchored, _relative_change(model.forward(batch, INFER).y_hat,
                                                              model.forward(shuffled, INFER).y_hat))

        model = build_variant(base.replace(rn_mode="all_pairs"))
        perm = rng.permutation(4)
        objs = np.concatenate([batch.x[:, None], batch.related], axis=1)[:, perm]
        shuffled = SampleBatch(objs[:, 0], objs[:, 1:], batch.y, batch.y_aux)
        worst_pairs = max(worst_pairs, _relative_change(model.forward(batch, INFER).y_hat,
                                                        model.forward(shuffled, INFER).y_hat))
    ok = worst_anchored < 1e-9 and worst_pairs < 1e-9
    acceptance(2, ok, f"max relative change anchored {worst_anchored:.1e}, all pairs {worst_pairs:.1e} over 100 models")
    assert ok


class _ConstantPredictor:
    """Stands in for a model whose main head returns fixed predictions."""

    def __init__(self, y_hat, variant="dnn"):
        self.y_hat = np.asarray(y_hat, dtype=float)
        self.config = ModelConfig(input_dim=1, variant=variant)

    def forward(self, data, mode):
        class P:
            pass

        p = P()
        p.y_hat = self.y_hat
        return p


def test_3_r_squared_oracle(acceptance):
    from relnet.model import RelationalSample

    def samples(y):
        return [RelationalSample(np.zeros(1), [], float(v), 0.0, i, i, 0) for i, v in enumerate(y)]

    y = [0.0, 1.0, 2.0, 3.0]
    perfect = evaluate_r2(_ConstantPredictor(y), samples(y)).r_squared
    mean = evaluate_r2(_ConstantPredictor(np.full(4, 1.5)), samples(y)).r_squared
    four = evaluate_r2(_ConstantPredictor([0.5, 1.0, 2.5, 3.0]), samples(y)).r_squared
    ok = abs(perfect - 1) <= 1e-12 and abs(mean) <= 1e-12 and abs(four - 0.9) <= 1e-12
    acceptance(3, ok, f"perfect {perfect!r}, mean {mean!r}, 4-point {four!r}")
    assert ok
    assert r_squared(y, [0.5, 1.0, 2.5, 3.0]) == four


def _grads(model, batch):
    model.zero_grad()
    result = model.loss(batch, TRAIN)
    model.backward(result)
    return {name: p.grads.copy() for name, p in model.param_dict().items()}


def test_4_mtl_degeneracy(acceptance):
    worst = 0.0
    for seed in range(5):
        cfg = tiny_model_config(seed=seed).replace(dropout_keep=1.0, lambda_aux=0.0)
        batch = random_batch(cfg, size=6, seed=seed)
        with_aux = _grads(build_variant(cfg.replace(variant="dnn_mtl")), batch)
        without = _grads(build_variant(cfg.replace(variant="dnn")), batch)
        assert set(without) < set(with_aux)
        for name, g in without.items():
            worst = max(worst, float(np.max(np.abs(g - with_aux[name]))))
        # with lambda = 0 the auxiliary head cannot reach the shared blocks either
        full = build_variant(cfg)
        base = _grads(full, batch)
        for p in full.head_aux.parameters():
            p.values[...] += np.random.default_rng(seed).normal(size=p.shape)
        moved = _grads(full, batch)
        for name, g in base.items():
            if not name.startswith("head_aux"):
                worst = max(worst, float(np.max(np.abs(g - moved[name]))))
    ok = worst <= 1e-12
    acceptance(4, ok, f"max gradient difference {worst:.1e} on shared + main-head parameters")
    assert ok


def test_5_memorization(acceptance):
    start = time.perf_counter()
    market = generate_market(GeneratorConfig(num_series=200))
    train_samples = prepare_split(market, 3, 1000).train[:32]
    scaling = TargetScaling.fit(train_samples)
    scores = []
    for seed in (0, 1, 2):
        cfg = ModelConfig(input_dim=market.encoder.input_dim, seed=seed, dropout_keep=1.0, gamma_l2=0.0)
        model = build_variant(cfg.replace(**scaling.model_overrides()))
        train(model, train_samples, TrainConfig(epochs=2000, seed=seed))
        scores.append(evaluate_r2(model, train_samples).r_squared)
    elapsed = time.perf_counter() - start
    ok = sum(s >= 0.99 for s in scores) >= 2 and elapsed < 300
    acceptance(5, ok, f"train R^2 {', '.join(f'{s:.4f}' for s in scores)} (depth-15 encoder, 32 samples); {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_6_ablation_ordering(acceptance):
    start = time.perf_counter()
    market = generate_market(GeneratorConfig())
    mcfg = ModelConfig(input_dim=market.encoder.input_dim, encoder_depth=6, n_related=3)
    report = run_ablation(market, mcfg, TrainConfig(), seeds=(0, 1, 2), split_day=1095)
    elapsed = time.perf_counter() - start
    dnn, mtl, rn = (report.mean_r2(v) for v in ("dnn", "dnn_mtl", "dnn_rn_mtl"))
    ok = mtl >= dnn + 0.01 and rn >= mtl + 0.01 and elapsed < 1800
    acceptance(6, ok, f"DNN {dnn:.4f}, DNN+MTL {mtl:.4f} ({mtl - dnn:+.4f}), "
                      f"DNN+RN+MTL {rn:.4f} ({rn - mtl:+.4f}); {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_7_null_structure_control(acceptance):
    market = generate_market(GeneratorConfig(competition_strength=0.0))
    mcfg = ModelConfig(input_dim=market.encoder.input_dim, encoder_depth=6, n_related=3)
    report = run_ablation(market, mcfg, TrainConfig(), seeds=range(5), split_day=1095,
                          variants=("dnn_mtl", "dnn_rn_mtl"))
    mtl, rn = report.mean_r2("dnn_mtl"), report.mean_r2("dnn_rn_mtl")
    ok = rn - mtl < 0.02
    acceptance(7, ok, f"no competition: DNN+MTL {mtl:.4f}, DNN+RN+MTL {rn:.4f}, delta {rn - mtl:+.4f} (5 seeds)")
    assert ok


def test_8_determinism(acceptance, tmp_path, capsys):
    market = tmp_path / "m.jsonl"
    assert main(["generate", "--num-series", "150", "--horizon-days", "400", "--out", str(market)]) == 0
    args = ["ablate", "--dataset", str(market), "--split-day", "300", "--seeds", "0,1", "--epochs", "3",
            "--encoder-depth", "2", "--encoder-width", "16", "--repr-dim", "8", "--batch-size", "16"]
    docs = []
    for _ in range(2):
        assert main([*args, "--out", str(tmp_path / "ablation.json")]) == 0
        docs.append((tmp_path / "ablation.json").read_bytes())
    capsys.readouterr()
    ok = docs[0] == docs[1]
    acceptance(8, ok, f"two ablate runs -> {'identical' if ok else 'different'} report JSON ({len(docs[0])} bytes)")
    assert ok


def test_9_round_trip(acceptance, tmp_path):
    market = generate_market(GeneratorConfig(num_series=300, seed=4))
    save_dataset(market, tmp_path / "m.jsonl")
    loaded = load_dataset(tmp_path / "m.jsonl")
    data_ok = loaded.records == market.records and dumps_dataset(loaded) == dumps_dataset(market)

    cfg = tiny_model_config().replace(input_dim=market.encoder.input_dim)
    model = build_variant(cfg)
    split = prepare_split(market, cfg.n_related, 700)
    train(model, split.train[:40], TrainConfig(epochs=2, batch_size=8))
    model.save(tmp_path / "ckpt.json")
    restored = RelNetModel.load(tmp_path / "ckpt.json")
    ckpt_ok = all(np.array_equal(p.values, restored.param_dict()[n].values) for n, p in model.param_dict().items())
    ckpt_ok &= all(np.array_equal(a.running_mean, b.running_mean) and np.array_equal(a.running_var, b.running_var)
                   for a, b in zip(model.batchnorms(), restored.batchnorms()))
    same_pred = np.array_equal(model.predict(split.test).y_hat, restored.predict(split.test).y_hat)
    ok = data_ok and ckpt_ok and same_pred
    acceptance(9, ok, f"dataset exact {data_ok}, checkpoint exact {ckpt_ok}, predictions identical {same_pred}")
    assert ok
