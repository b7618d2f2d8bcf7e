"""Numerics substrate: reverse-mode autodiff, seeded RNG streams, optimizers."""

from .engine import (
    DEFAULT_DTYPE,
    NumericsError,
    Tensor,
    clamp,
    collect_grads,
    concat,
    conv2d,
    embedding,
    gelu,
    grad_enabled,
    layer_norm,
    matmul,
    no_grad,
    op_trace,
    sigmoid,
    silu,
    softmax,
    stop_gradient,
    tabs,
    tanh,
    texp,
    tlog,
    tmean,
    tsqrt,
    tsum,
    upsample_nearest2d,
    zero_grads,
)
from .gradcheck import grad_check
from .optim import AdamState, GradBundle, adam_step, clip_global_norm, sgd_step
from .rng import Rng, gaussian

__all__ = [
    "DEFAULT_DTYPE",
    "NumericsError",
    "Tensor",
    "clamp",
    "collect_grads",
    "concat",
    "conv2d",
    "embedding",
    "gelu",
    "grad_enabled",
    "layer_norm",
    "matmul",
    "no_grad",
    "op_trace",
    "sigmoid",
    "silu",
    "softmax",
    "stop_gradient",
    "tabs",
    "tanh",
    "texp",
    "tlog",
    "tmean",
    "tsqrt",
    "tsum",
    "upsample_nearest2d",
    "zero_grads",
    "grad_check",
    "AdamState",
    "GradBundle",
    "adam_step",
    "clip_global_norm",
    "sgd_step",
    "Rng",
    "gaussian",
]
