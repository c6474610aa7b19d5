"""Minimal dense neural-network kernel: tensors with reverse-mode
gradients, dense layers with inverted dropout, loss primitives, Adam."""

from .autodiff import (
    GradientTape,
    Tensor,
    add,
    concat,
    div,
    exp,
    grad,
    log,
    logsumexp,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    square,
    sub,
    take_rows,
    tmean,
    tsum,
    wrap,
)
from .layers import (
    LayerSpec,
    affine,
    as_matrix,
    dropout,
    glorot_uniform,
    init_layer_params,
    mlp_forward,
)
from .losses import mse
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "GradientTape",
    "LayerSpec",
    "Tensor",
    "adam_step",
    "add",
    "affine",
    "as_matrix",
    "concat",
    "div",
    "dropout",
    "exp",
    "glorot_uniform",
    "grad",
    "init_layer_params",
    "log",
    "logsumexp",
    "matmul",
    "mse",
    "mul",
    "neg",
    "relu",
    "reshape",
    "square",
    "sub",
    "take_rows",
    "tmean",
    "tsum",
    "wrap",
]
