"""Minimal tensor engine: float arrays, reverse-mode tape, layer ops."""
from . import _backend as backend
from .core import (
    Tape, Tensor, add, as_tensor, backward, broadcast_to, clamp, concat, default_dtype, div, exp,
    getitem, linear, log, matmul, mean, mul, neg, no_grad, pad, power, precision, reshape, sqrt,
    stack, sub, transpose, tsum,
)
from .gradcheck import grad_check
from .io import TensorFormatError, decode_tensor, encode_tensor, read_tensor, tensor_io, write_tensor
from .nn import (
    BatchNormState, activation, batch_norm, conv3d, conv3d_transpose, dropout, gelu, layer_norm,
    maxpool3d, relu, sigmoid, softmax, upsample_bilinear2d,
)

__all__ = [
    "Tape", "Tensor", "add", "as_tensor", "backward", "backend", "broadcast_to", "clamp", "concat",
    "default_dtype", "div", "exp", "getitem", "grad_check", "linear", "log", "matmul", "mean",
    "mul", "neg", "no_grad", "pad", "power", "precision", "reshape", "sqrt", "stack", "sub",
    "transpose", "tsum", "TensorFormatError", "decode_tensor", "encode_tensor", "read_tensor",
    "tensor_io", "write_tensor", "BatchNormState", "activation", "batch_norm", "conv3d",
    "conv3d_transpose", "dropout", "gelu", "layer_norm", "maxpool3d", "relu", "sigmoid",
    "softmax", "upsample_bilinear2d",
]
