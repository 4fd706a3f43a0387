"""Minimal deterministic tensor engine: reverse-mode autodiff, conv kernels
(compiled or numpy), optimizers, and snapshot/rollback of training state."""

from .conv_backend import BACKEND
from .ops import (
    add,
    concat_channels,
    conv2d,
    elementwise,
    l1_loss,
    linear,
    mul,
    relu,
    scale_shift,
    sub,
    tanh,
    tsum,
    upsample_nearest2,
)
from .optim import AdamW, SGD, ParamSnapshot, make_optimizer, restore_params, snapshot_params
from .tensor import Tape, Tensor, backward, record

__all__ = [
    "BACKEND",
    "Tensor",
    "Tape",
    "record",
    "backward",
    "conv2d",
    "linear",
    "relu",
    "tanh",
    "add",
    "sub",
    "mul",
    "scale_shift",
    "elementwise",
    "upsample_nearest2",
    "concat_channels",
    "tsum",
    "l1_loss",
    "AdamW",
    "SGD",
    "make_optimizer",
    "ParamSnapshot",
    "snapshot_params",
    "restore_params",
]
