"""Minimal reverse-mode autodiff with the model's layer vocabulary."""

from .conv import conv2d, maxpool2d, nearest_upsample2x
from .gradcheck import check_gradients
from .sampler import (
    NormalizedBox,
    crop_resize,
    nearest_resample,
    sanitize_box,
    sanitize_values,
)
from .serial import load_params, save_params
from .tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    channel_softmax,
    concat,
    concat_channels,
    dense,
    div,
    maximum,
    minimum,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    sub,
)

__all__ = [
    "Tape",
    "Tensor",
    "NormalizedBox",
    "absolute",
    "add",
    "backward",
    "channel_softmax",
    "check_gradients",
    "concat",
    "concat_channels",
    "conv2d",
    "crop_resize",
    "dense",
    "div",
    "load_params",
    "maximum",
    "maxpool2d",
    "minimum",
    "mul",
    "nearest_resample",
    "nearest_upsample2x",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "sanitize_box",
    "sanitize_values",
    "save_params",
    "sigmoid",
    "slice_axis",
    "sub",
]
