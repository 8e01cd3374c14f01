"""Minimal reverse-mode autodiff used for classifier training and the attack loop."""

from .adam import AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check, relative_error
from .tensor import (
    Tensor,
    add,
    backward,
    bone_lengths,
    broadcast_to,
    concat,
    conv1d,
    diff,
    exp,
    getitem,
    l2sq,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    square,
    sub,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "AdamState", "GradCheckReport", "Tensor", "adam_step", "add", "backward", "bone_lengths",
    "broadcast_to", "concat", "conv1d", "diff", "exp", "getitem", "grad_check", "l2sq", "log",
    "log_softmax", "matmul", "mean", "mul", "relative_error", "relu", "reshape", "scale",
    "softmax", "square", "sub", "tanh", "transpose", "tsum",
]
