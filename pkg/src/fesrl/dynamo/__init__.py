"""Minimal float64 autodiff: tape, dense/GRU primitives, Adam, checkpoints."""
from . import tensor as ops
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .layers import DenseParams, GruParams, dense_forward, gru_step
from .optim import Adam, NonFiniteGradientError, OptimizerState, clip_global_norm, optimizer_update
from .tensor import Gradients, Tape, Tensor, backward, parameter

__all__ = [
    "Adam", "Checkpoint", "CheckpointError", "DenseParams", "Gradients", "GruParams",
    "NonFiniteGradientError", "OptimizerState", "Tape", "Tensor", "backward",
    "clip_global_norm", "dense_forward", "finite_diff_check", "gru_step", "load_checkpoint",
    "ops", "optimizer_update", "parameter", "save_checkpoint",
]
