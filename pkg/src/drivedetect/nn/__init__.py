"""Minimal differentiable kernel set with verified backward passes."""

from .gradcheck import (
    CheckResult,
    compare_grads,
    max_relative_error,
    numerical_gradient,
    run_layer_checks,
)
from .layers import BatchNorm, Conv1x1, Dense, LstmCell
from .loss import default_alpha, focal_loss, focal_loss_batch, softmax
from .optim import Adam
from .params import Param, uniform_init

__all__ = [
    "Adam",
    "BatchNorm",
    "CheckResult",
    "Conv1x1",
    "Dense",
    "LstmCell",
    "Param",
    "compare_grads",
    "default_alpha",
    "focal_loss",
    "focal_loss_batch",
    "max_relative_error",
    "numerical_gradient",
    "run_layer_checks",
    "softmax",
    "uniform_init",
]
