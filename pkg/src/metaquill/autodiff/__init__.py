from .tensor import (
    Tensor,
    add,
    backward,
    col2im,
    concat,
    conv2d,
    cross_entropy,
    div,
    embed_lookup,
    enable_grad,
    exp,
    expand,
    full,
    im2col,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    maxpool2x2,
    mul,
    narrow,
    neg,
    no_grad,
    ones,
    pad2d,
    pad_axis,
    randn,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    stop_gradient,
    sub,
    tanh,
    tensor_max,
    tensor_mean,
    tensor_sum,
    transpose,
    zeros,
)
from .tnsr_io import load_bundle, read_tensor, save_bundle, write_tensor

__all__ = [
    "Tensor", "add", "backward", "col2im", "concat", "conv2d", "cross_entropy",
    "div", "embed_lookup", "enable_grad", "exp", "expand", "full", "im2col",
    "is_grad_enabled", "log", "log_softmax", "matmul", "maxpool2x2", "mul",
    "narrow", "neg", "no_grad", "ones", "pad2d", "pad_axis", "randn", "relu",
    "reshape", "scale", "sigmoid", "softmax", "stop_gradient", "sub", "tanh",
    "tensor_max", "tensor_mean", "tensor_sum", "transpose", "zeros",
    "load_bundle", "read_tensor", "save_bundle", "write_tensor",
]
