"""From-scratch reverse-mode autodiff and the layers built on it."""

from .tensor import (
    Tensor,
    add,
    as_tensor,
    clip_min,
    concat,
    conv2d_3x3,
    div,
    dropout,
    elu,
    exp,
    grad_enabled,
    log,
    log_softmax,
    logsumexp,
    matmul,
    maxpool_2x2,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    stack,
    sub,
    take,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .nn import (
    ACTIVATIONS,
    BatchNorm,
    ConvBlock,
    Dense,
    LSTMLayer,
    LSTMStack,
    Parameter,
    ParameterStore,
    batchnorm,
    dense,
    glorot_uniform,
    lstm_cell,
)

__all__ = [
    "ACTIVATIONS",
    "BatchNorm",
    "ConvBlock",
    "Dense",
    "LSTMLayer",
    "LSTMStack",
    "Parameter",
    "ParameterStore",
    "Tensor",
    "add",
    "as_tensor",
    "batchnorm",
    "clip_min",
    "concat",
    "conv2d_3x3",
    "dense",
    "div",
    "dropout",
    "elu",
    "exp",
    "glorot_uniform",
    "grad_enabled",
    "log",
    "log_softmax",
    "logsumexp",
    "lstm_cell",
    "matmul",
    "maxpool_2x2",
    "mul",
    "neg",
    "no_grad",
    "power",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "softplus",
    "sqrt",
    "stack",
    "sub",
    "take",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
]
