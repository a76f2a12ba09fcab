"""Small float64 neural-network toolkit with explicit backward passes."""

from .checkpoint import CheckpointError, read_checkpoint, restore_state, save_checkpoint
from .gradcheck import GradCheckReport, gradient_check, relative_error
from .layers import INFER, TRAIN, BatchNorm, Dense, Dropout, Layer, ReLU, frozen_dropout
from .mlp import MlpBlock, build_mlp
from .optim import MomentumOptimizer, momentum_step
from .tensor import ParamTensor, add_l2_grad, check_unique_names, he_init, l2_penalty

__all__ = [
    "INFER",
    "TRAIN",
    "BatchNorm",
    "CheckpointError",
    "Dense",
    "Dropout",
    "GradCheckReport",
    "Layer",
    "MlpBlock",
    "MomentumOptimizer",
    "ParamTensor",
    "ReLU",
    "add_l2_grad",
    "build_mlp",
    "check_unique_names",
    "frozen_dropout",
    "gradient_check",
    "he_init",
    "l2_penalty",
    "momentum_step",
    "read_checkpoint",
    "relative_error",
    "restore_state",
    "save_checkpoint",
]
