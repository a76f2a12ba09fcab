"""Popularity prediction with a shared-encoder relation network and an auxiliary task."""

from .market import GeneratorConfig, MarketDataset, generate_market, load_dataset, save_dataset
from .model import ModelConfig, RelNetModel, build_variant
from .training import TrainConfig, evaluate_r2, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "GeneratorConfig",
    "MarketDataset",
    "ModelConfig",
    "RelNetModel",
    "TrainConfig",
    "build_variant",
    "evaluate_r2",
    "generate_market",
    "load_dataset",
    "run_ablation",
    "save_dataset",
    "train",
]
