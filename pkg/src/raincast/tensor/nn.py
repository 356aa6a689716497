"""Layer operations: convolutions, pooling, resampling, normalization, activations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .core import Tensor, _result, as_tensor


def _triple(v):
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"expected a triple, got {v}")
    return v


def _out_extent(n, k, s, p, axis):
    span = n + 2 * p - k
    if span < 0:
        raise ValueError(f"kernel extent {k} exceeds padded input extent {n + 2 * p} on axis {axis}")
    if span % s:
        raise ValueError(
            f"non-integral output extent on axis {axis}: ({n} + 2*{p} - {k}) / {s} + 1")
    return span // s + 1


def _conv3d_forward_data(x, w, stride, padding):
    n, cin, d, h, wd = x.shape
    cout, _, kd, kh, kw = w.shape
    pd, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))) if any(padding) else x
    cols = _backend.kernels.im2col3d(np.ascontiguousarray(xp), kd, kh, kw, *stride)
    do, ho, wo = cols.shape[1:4]
    out = cols.reshape(-1, cols.shape[-1]) @ w.reshape(cout, -1).T
    return out.reshape(n, do, ho, wo, cout).transpose(0, 4, 1, 2, 3), cols, xp.shape


def _col2im_cropped(dcols, padded_shape, kernel, stride, padding):
    dxp = _backend.kernels.col2im3d(np.ascontiguousarray(dcols), tuple(padded_shape), *kernel, *stride)
    pd, ph, pw = padding
    return np.ascontiguousarray(
        dxp[:, :, pd:padded_shape[2] - pd, ph:padded_shape[3] - ph, pw:padded_shape[4] - pw])


def conv3d(x, weight, bias=None, stride=1, padding=0):
    """3D cross-correlation, ``x`` [N,Cin,D,H,W] with ``weight`` [Cout,Cin,kd,kh,kw]."""
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d expects 5-d input and kernel, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input channels {x.shape[1]} != kernel input channels {weight.shape[1]}")
    if min(stride) < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    for axis in range(3):
        _out_extent(x.shape[2 + axis], weight.shape[2 + axis], stride[axis], padding[axis], axis)
    kernel = weight.shape[2:]
    out, cols, padded_shape = _conv3d_forward_data(x.data, weight.data, stride, padding)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1, 1)
    cout = weight.shape[0]

    def bw(g):
        gmat = g.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (gmat @ weight.data.reshape(cout, -1)).reshape(cols.shape)
            gx = _col2im_cropped(dcols, padded_shape, kernel, stride, padding)
        if weight.requires_grad:
            gw = (gmat.T @ cols.reshape(-1, cols.shape[-1])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _result(out, parents, bw, "conv3d")


def conv3d_transpose(x, weight, bias=None, stride=1, padding=0):
    """Transposed 3D convolution; ``weight`` is [Cin,Cout,kd,kh,kw].

    This is the input-gradient map of :func:`conv3d` with the same kernel,
    so output extent is ``(D - 1) * stride - 2 * pad + k`` per axis.
    """
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d_transpose expects 5-d input and kernel, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"input channels {x.shape[1]} != kernel input channels {weight.shape[0]}")
    n, cin, d, h, w = x.shape
    _, cout, kd, kh, kw = weight.shape
    kernel = (kd, kh, kw)
    full = [(e - 1) * s + k for e, s, k in zip((d, h, w), stride, kernel)]
    out_ext = [f - 2 * p for f, p in zip(full, padding)]
    if min(out_ext) <= 0:
        raise ValueError(f"non-positive transposed-conv output extent {tuple(out_ext)}")
    padded_shape = (n, cout, *full)
    xmat = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    cols = (xmat @ wmat).reshape(n, d, h, w, -1)
    out = _col2im_cropped(cols, padded_shape, kernel, stride, padding)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1, 1)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0)) + tuple((p, p) for p in padding)) if any(padding) else g
        gcols = _backend.kernels.im2col3d(np.ascontiguousarray(gp), kd, kh, kw, *stride)
        gcols = gcols.reshape(-1, gcols.shape[-1])
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(n, d, h, w, cin).transpose(0, 4, 1, 2, 3)
            gx = np.ascontiguousarray(gx)
        if weight.requires_grad:
            gw = (xmat.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _result(out, parents, bw, "conv3d_transpose")


def maxpool3d(x, window, stride=None):
    """Max pooling; the gradient goes to the first maximum in scan order."""
    window = _triple(window)
    stride = window if stride is None else _triple(stride)
    for axis, (n, k) in enumerate(zip(x.shape[2:], window)):
        if k > n:
            raise ValueError(f"pool window {k} larger than input extent {n} on axis {axis}")
    out, idx = _backend.kernels.maxpool3d_forward(x.data, *window, *stride)

    def bw(g):
        return (_backend.kernels.maxpool3d_backward(np.ascontiguousarray(g), idx, x.shape),)

    return _result(out, (x,), bw, "maxpool3d")


def bilinear_source_index(n_in, scale):
    """Half-pixel-centre sample positions: (lo index, hi index, hi weight)."""
    i = np.arange(n_in * scale, dtype=np.float64)
    src = np.clip((i + 0.5) / scale - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def upsample_bilinear2d(x, scale=2):
    """Bilinear upsampling of the two trailing axes by an integer factor."""
    scale = int(scale)
    if scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError(f"need at least 2 spatial axes, got {x.shape}")
    lead, (h, w) = x.shape[:-2], x.shape[-2:]
    hidx = bilinear_source_index(h, scale)
    widx = bilinear_source_index(w, scale)
    flat = np.ascontiguousarray(x.data.reshape(-1, h, w))
    out = _backend.kernels.upsample_bilinear_forward(flat, *hidx, *widx)

    def bw(g):
        g3 = np.ascontiguousarray(g.reshape(-1, h * scale, w * scale))
        gx = _backend.kernels.upsample_bilinear_backward(g3, h, w, *hidx, *widx)
        return (gx.reshape(x.shape),)

    return _result(out.reshape(lead + (h * scale, w * scale)), (x,), bw, "upsample")


# --------------------------------------------------------------- activations
def relu(x):
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)
    # keep the open interval even where float rounding saturates
    fi = np.finfo(z.dtype)
    out = np.clip(out, fi.tiny, 1 - fi.epsneg)
    return _result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), bw, "softmax")


def gelu(x):
    """Tanh approximation of GELU."""
    z = x.data
    c = np.asarray(np.sqrt(2.0 / np.pi), dtype=z.dtype)
    inner = c * (z + 0.044715 * z ** 3)
    t = np.tanh(inner)
    out = 0.5 * z * (1 + t)

    def bw(g):
        dinner = c * (1 + 3 * 0.044715 * z ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * z * (1 - t ** 2) * dinner),)

    return _result(out, (x,), bw, "gelu")


def activation(x, kind, axis=-1):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        if not -x.ndim <= axis < x.ndim:
            raise ValueError(f"softmax axis {axis} invalid for {x.ndim}-d input")
        return softmax(x, axis)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------- normalization
@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels, dtype=np.float32, momentum=0.1):
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), momentum)


def batch_norm(x, gamma, beta, state, mode="train", eps=1e-5):
    """Per-channel normalization over every axis except axis 1.

    In train mode the running statistics in ``state`` are updated in place
    (unbiased variance for the running estimate, biased for normalizing).
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    count = x.size // x.shape[1]
    if mode == "train":
        if count < 2:
            raise ValueError("batch_norm in train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.var(axis=axes, dtype=np.float64)
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mu
        state.running_var[...] = (1 - m) * state.running_var + m * var * count / (count - 1)
    elif mode == "eval":
        mu = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - mu.astype(x.dtype).reshape(bshape)) * inv
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bw(g):
        gg = gamma.data.reshape(bshape)
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gg
        if mode == "train":
            dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), bw, "batch_norm")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), bw, "layer_norm")


# ------------------------------------------------------------------- dropout
def dropout(x, p, mode="train", rng=None, channelwise=False):
    """Inverted dropout. ``channelwise`` zeroes whole (sample, channel) volumes."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0:
        return x
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    mshape = x.shape[:2] + (1,) * (x.ndim - 2) if channelwise else x.shape
    keep = (rng.random(mshape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")
