"""Minimal differentiable feed-forward networks in numpy."""

from .adam import AdamState, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    BATCHNORM, FLATTEN, GAP, MAXPOOL, RELU, Classifier, ForwardCache, Gradients, LayerSpec,
    NetworkSpec, Parameters, ShapeError, backward, build_tiny, build_vgg15, conv, cross_entropy,
    dense, forward, init_params, loss_and_gradients, param_shapes, predict, propagate_shapes, softmax,
)

__all__ = [
    "AdamState", "adam_step", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "BATCHNORM", "FLATTEN", "GAP", "MAXPOOL", "RELU", "Classifier", "ForwardCache", "Gradients",
    "LayerSpec", "NetworkSpec", "Parameters", "ShapeError", "backward", "build_tiny", "build_vgg15",
    "conv", "cross_entropy", "dense", "forward", "init_params", "loss_and_gradients", "param_shapes",
    "predict", "propagate_shapes", "softmax",
]
