from .autodiff import (
    Node,
    ShapeError,
    add,
    add_channel_bias,
    as_node,
    avgpool2x,
    backward,
    concat_channels,
    conv2d,
    linear,
    matmul,
    mse_loss,
    mul,
    parameter,
    reshape,
    scale,
    silu,
    sub,
    sum_all,
    upsample2x,
)
from .optim import AdamState, adam_step
from .rng import RandomSource, gaussian
from .tensorio import TensorFormatError, read_tensor, write_tensor

__all__ = [
    "Node", "ShapeError", "add", "add_channel_bias", "as_node", "avgpool2x", "backward",
    "concat_channels", "conv2d", "linear", "matmul", "mse_loss", "mul", "parameter",
    "reshape", "scale", "silu", "sub", "sum_all", "upsample2x",
    "AdamState", "adam_step", "RandomSource", "gaussian",
    "TensorFormatError", "read_tensor", "write_tensor",
]
