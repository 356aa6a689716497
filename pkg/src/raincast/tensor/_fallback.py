"""Pure-numpy implementations of the hot kernels.

Signatures mirror the compiled ``_kernels`` module one-to-one so the backend
switch in :mod:`raincast.tensor._backend` is a plain module swap.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3d(xp, kd, kh, kw, sd, sh, sw):
    # [N, C, Do, Ho, Wo, kd, kh, kw] view, then move C and kernel axes last
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    n, c, do, ho, wo = win.shape[:5]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7)
    return np.ascontiguousarray(cols).reshape(n, do, ho, wo, c * kd * kh * kw)


def col2im3d(cols, padded_shape, kd, kh, kw, sd, sh, sw):
    n, c = padded_shape[:2]
    do, ho, wo = cols.shape[1:4]
    out = np.zeros(padded_shape, dtype=cols.dtype)
    blocks = cols.reshape(n, do, ho, wo, c, kd, kh, kw).transpose(0, 4, 1, 2, 3, 5, 6, 7)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                out[:, :, a:a + sd * (do - 1) + 1:sd,
                    b:b + sh * (ho - 1) + 1:sh,
                    e:e + sw * (wo - 1) + 1:sw] += blocks[..., a, b, e]
    return out


def maxpool3d_forward(x, wd, wh, ww, sd, sh, sw):
    n, c, d, h, w = x.shape
    win = sliding_window_view(x, (wd, wh, ww), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    do, ho, wo = win.shape[2:5]
    flat = win.reshape(n, c, do, ho, wo, wd * wh * ww)
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    a, rem = np.divmod(local, wh * ww)
    b, e = np.divmod(rem, ww)
    zd = np.arange(do)[:, None, None] * sd + a
    zh = np.arange(ho)[None, :, None] * sh + b
    zw = np.arange(wo)[None, None, :] * sw + e
    idx = ((zd * h + zh) * w + zw).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool3d_backward(grad_out, idx, in_shape):
    n, c, d, h, w = in_shape
    vol = d * h * w
    offsets = (np.arange(n * c, dtype=np.int64) * vol).reshape(n, c, 1, 1, 1)
    flat = np.bincount((idx + offsets).ravel(), weights=grad_out.ravel().astype(np.float64),
                       minlength=n * c * vol)
    return flat.astype(grad_out.dtype).reshape(in_shape)


def upsample_bilinear_forward(x, h0, h1, hw, w0, w1, ww):
    xd = x.astype(np.float64)
    a = hw[:, None]
    b = ww[None, :]
    top = (1.0 - b) * xd[:, h0][:, :, w0] + b * xd[:, h0][:, :, w1]
    bot = (1.0 - b) * xd[:, h1][:, :, w0] + b * xd[:, h1][:, :, w1]
    return ((1.0 - a) * top + a * bot).astype(x.dtype)


def upsample_bilinear_backward(g, H, W, h0, h1, hw, w0, w1, ww):
    m = g.shape[0]
    # interpolation matrices: out = Ah @ x @ Aw.T, so grad = Ah.T @ g @ Aw
    ah = np.zeros((len(h0), H))
    np.add.at(ah, (np.arange(len(h0)), h0), 1.0 - hw)
    np.add.at(ah, (np.arange(len(h0)), h1), hw)
    aw = np.zeros((len(w0), W))
    np.add.at(aw, (np.arange(len(w0)), w0), 1.0 - ww)
    np.add.at(aw, (np.arange(len(w0)), w1), ww)
    out = np.einsum("ih,mij,jw->mhw", ah, g.astype(np.float64), aw, optimize=True)
    return out.astype(g.dtype).reshape(m, H, W)
