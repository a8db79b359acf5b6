"""Small differentiable-computation substrate used by every network."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, strip_groups
from .gradcheck import GradCheckReport, grad_check, grad_check_report, relative_error
from .params import AdamHyper, ParamStore, adam_step, add_conv, add_linear, glorot_uniform, lr_at
from .tensor import (ShapeError, Tensor, add, as_tensor, as_tensor_like, concat, conv2d, div, exp, gradients, linear, log,
                     mean, mul, neg, no_grad, relu, reshape, set_max, softplus, square,
                     std_normal_logpdf, sub, take, tanh, tsum)

__all__ = [
    "AdamHyper", "Checkpoint", "CheckpointError", "ParamStore", "ShapeError", "Tensor", "adam_step",
    "add", "add_conv", "as_tensor", "as_tensor_like", "add_linear", "concat", "conv2d", "div", "exp", "glorot_uniform", "GradCheckReport", "grad_check", "grad_check_report",
    "gradients", "linear", "load_checkpoint", "log", "lr_at", "mean", "mul", "neg", "no_grad",
    "relative_error", "relu", "reshape", "save_checkpoint", "set_max", "softplus", "square",
    "std_normal_logpdf", "strip_groups", "sub", "take", "tanh", "tsum",
]
