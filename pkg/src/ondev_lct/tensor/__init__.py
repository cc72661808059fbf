"""Tensor values, reverse-mode autodiff and the primitive op set."""

from . import kernels, ops
from .attention import AttentionParams, mhsa
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    BNState,
    add,
    batchnorm,
    conv2d,
    depthwise_conv2d,
    dropout,
    gelu,
    label_smoothed_ce,
    layernorm,
    linear,
    matmul,
    mul,
    pointwise_conv2d,
    relu,
    scale,
    softmax,
    trace_macs,
)
from .rng import Rng
from .tensor import Graph, Tensor, no_grad, parameter, strict_finite

__all__ = [
    "AttentionParams", "BNState", "GradCheckReport", "Graph", "Rng", "Tensor",
    "add", "batchnorm", "conv2d", "depthwise_conv2d", "dropout", "gelu", "grad_check",
    "kernels", "label_smoothed_ce", "layernorm", "linear", "matmul", "mhsa", "mul",
    "no_grad", "ops", "parameter", "pointwise_conv2d", "relu", "scale", "softmax",
    "strict_finite", "trace_macs",
]
