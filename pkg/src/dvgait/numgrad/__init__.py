"""Minimal deterministic tensor library with reverse-mode differentiation."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import (
    batchnorm2d,
    clamp,
    bce_with_logits,
    center_loss,
    concat_channels,
    conv2d,
    deconv2d,
    dense,
    flatten,
    global_avg_pool,
    l1_loss,
    leaky_relu,
    maxpool2x2,
    prelu,
    relu,
    sigmoid,
    softmax_ce,
    tanh,
)
from .gradcheck import GradCheckResult, gradcheck
from .modules import (
    BatchNorm2d,
    Conv2d,
    Deconv2d,
    Dense,
    Module,
    Parameter,
    PReLU,
    frozen,
)
from .optim import Adam
from .tensor import Tensor, accumulate_grad, add, is_grad_enabled, no_grad, record_op

__all__ = [
    "Adam",
    "BatchNorm2d",
    "CheckpointError",
    "Conv2d",
    "Deconv2d",
    "Dense",
    "GradCheckResult",
    "Module",
    "PReLU",
    "Parameter",
    "Tensor",
    "accumulate_grad",
    "add",
    "batchnorm2d",
    "bce_with_logits",
    "center_loss",
    "clamp",
    "concat_channels",
    "conv2d",
    "deconv2d",
    "dense",
    "flatten",
    "frozen",
    "global_avg_pool",
    "gradcheck",
    "is_grad_enabled",
    "l1_loss",
    "leaky_relu",
    "load_checkpoint",
    "maxpool2x2",
    "no_grad",
    "prelu",
    "record_op",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "softmax_ce",
    "tanh",
]
