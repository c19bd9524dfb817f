"""Minimal reverse-mode autodiff over numpy plus shared optimizers."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, Ema
from .tensor import (ShapeError, Tape, Tensor, add, broadcast_to, concat, gelu,
                     layer_norm, matmul, multiply, narrow, reduce_mean,
                     reduce_sum, relu, reshape, scale, softmax, take_rows,
                     transpose)

__all__ = ["Adam", "Ema", "CheckpointError", "load_checkpoint", "save_checkpoint",
           "ShapeError", "Tape", "Tensor", "add", "broadcast_to", "concat", "gelu",
           "layer_norm", "matmul", "multiply", "narrow", "reduce_mean",
           "reduce_sum", "relu", "reshape", "scale", "softmax", "take_rows",
           "transpose"]
