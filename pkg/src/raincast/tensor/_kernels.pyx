# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the convolution, pooling and resampling ops.

Every function here has a numpy twin in ``_fallback`` with an identical
signature and identical results (up to float summation order).
"""
import numpy as np

ctypedef fused real:
    float
    double


def im2col3d(real[:, :, :, :, ::1] xp, int kd, int kh, int kw,
             int sd, int sh, int sw):
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Do = (xp.shape[2] - kd) // sd + 1
    cdef Py_ssize_t Ho = (xp.shape[3] - kh) // sh + 1
    cdef Py_ssize_t Wo = (xp.shape[4] - kw) // sw + 1
    cdef Py_ssize_t K = C * kd * kh * kw
    dtype = np.float32 if real is float else np.float64
    out = np.empty((N, Do, Ho, Wo, K), dtype=dtype)
    cdef real[:, :, :, :, ::1] o = out
    cdef Py_ssize_t n, od, oh, ow, c, a, b, e, col, zd, zh
    with nogil:
        for n in range(N):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        col = 0
                        for c in range(C):
                            for a in range(kd):
                                zd = od * sd + a
                                for b in range(kh):
                                    zh = oh * sh + b
                                    for e in range(kw):
                                        o[n, od, oh, ow, col] = xp[n, c, zd, zh, ow * sw + e]
                                        col += 1
    return out


def col2im3d(real[:, :, :, :, ::1] cols, tuple padded_shape, int kd, int kh, int kw,
             int sd, int sh, int sw):
    cdef Py_ssize_t N = padded_shape[0], C = padded_shape[1]
    cdef Py_ssize_t Dp = padded_shape[2], Hp = padded_shape[3], Wp = padded_shape[4]
    cdef Py_ssize_t Do = cols.shape[1], Ho = cols.shape[2], Wo = cols.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, Dp, Hp, Wp), dtype=dtype)
    cdef real[:, :, :, :, ::1] xp = out
    cdef Py_ssize_t n, od, oh, ow, c, a, b, e, col, zd, zh
    with nogil:
        for n in range(N):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        col = 0
                        for c in range(C):
                            for a in range(kd):
                                zd = od * sd + a
                                for b in range(kh):
                                    zh = oh * sh + b
                                    for e in range(kw):
                                        xp[n, c, zd, zh, ow * sw + e] += cols[n, od, oh, ow, col]
                                        col += 1
    return out


def maxpool3d_forward(real[:, :, :, :, ::1] x, int wd, int wh, int ww,
                      int sd, int sh, int sw):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t D = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Do = (D - wd) // sd + 1
    cdef Py_ssize_t Ho = (H - wh) // sh + 1
    cdef Py_ssize_t Wo = (W - ww) // sw + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((N, C, Do, Ho, Wo), dtype=dtype)
    idx = np.empty((N, C, Do, Ho, Wo), dtype=np.int64)
    cdef real[:, :, :, :, ::1] o = out
    cdef long long[:, :, :, :, ::1] ix = idx
    cdef Py_ssize_t n, c, od, oh, ow, a, b, e, zd, zh, zw
    cdef real best, v
    cdef long long besti
    with nogil:
        for n in range(N):
            for c in range(C):
                for od in range(Do):
                    for oh in range(Ho):
                        for ow in range(Wo):
                            zd = od * sd
                            zh = oh * sh
                            zw = ow * sw
                            best = x[n, c, zd, zh, zw]
                            besti = (zd * H + zh) * W + zw
                            for a in range(wd):
                                for b in range(wh):
                                    for e in range(ww):
                                        v = x[n, c, zd + a, zh + b, zw + e]
                                        if v > best:
                                            best = v
                                            besti = ((zd + a) * H + zh + b) * W + zw + e
                            o[n, c, od, oh, ow] = best
                            ix[n, c, od, oh, ow] = besti
    return out, idx


def maxpool3d_backward(real[:, :, :, :, ::1] grad_out, long long[:, :, :, :, ::1] idx,
                       tuple in_shape):
    cdef Py_ssize_t N = in_shape[0], C = in_shape[1]
    cdef Py_ssize_t D = in_shape[2], H = in_shape[3], W = in_shape[4]
    cdef Py_ssize_t Do = grad_out.shape[2], Ho = grad_out.shape[3], Wo = grad_out.shape[4]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, D * H * W), dtype=dtype)
    cdef real[:, :, ::1] g = out
    cdef Py_ssize_t n, c, od, oh, ow
    with nogil:
        for n in range(N):
            for c in range(C):
                for od in range(Do):
                    for oh in range(Ho):
                        for ow in range(Wo):
                            g[n, c, idx[n, c, od, oh, ow]] += grad_out[n, c, od, oh, ow]
    return out.reshape((N, C, D, H, W))


def upsample_bilinear_forward(real[:, :, ::1] x, long long[::1] h0, long long[::1] h1,
                              double[::1] hw, long long[::1] w0, long long[::1] w1,
                              double[::1] ww):
    cdef Py_ssize_t M = x.shape[0], Ho = h0.shape[0], Wo = w0.shape[0]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((M, Ho, Wo), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t m, i, j
    cdef double a, b, top, bot
    with nogil:
        for m in range(M):
            for i in range(Ho):
                a = hw[i]
                for j in range(Wo):
                    b = ww[j]
                    top = (1.0 - b) * x[m, h0[i], w0[j]] + b * x[m, h0[i], w1[j]]
                    bot = (1.0 - b) * x[m, h1[i], w0[j]] + b * x[m, h1[i], w1[j]]
                    o[m, i, j] = <real>((1.0 - a) * top + a * bot)
    return out


def upsample_bilinear_backward(real[:, :, ::1] g, Py_ssize_t H, Py_ssize_t W,
                               long long[::1] h0, long long[::1] h1, double[::1] hw,
                               long long[::1] w0, long long[::1] w1, double[::1] ww):
    cdef Py_ssize_t M = g.shape[0], Ho = g.shape[1], Wo = g.shape[2]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((M, H, W), dtype=dtype)
    cdef real[:, :, ::1] gx = out
    cdef Py_ssize_t m, i, j
    cdef double a, b, v
    with nogil:
        for m in range(M):
            for i in range(Ho):
                a = hw[i]
                for j in range(Wo):
                    b = ww[j]
                    v = g[m, i, j]
                    gx[m, h0[i], w0[j]] += <real>((1.0 - a) * (1.0 - b) * v)
                    gx[m, h0[i], w1[j]] += <real>((1.0 - a) * b * v)
                    gx[m, h1[i], w0[j]] += <real>(a * (1.0 - b) * v)
                    gx[m, h1[i], w1[j]] += <real>(a * b * v)
    return out
