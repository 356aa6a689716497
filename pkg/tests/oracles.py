"""Scalar reference implementations used as independent test oracles.

Everything here is written with explicit Python loops over plain arrays so it
shares no code path with the vectorized/compiled kernels under test.
"""
import math
import itertools

import numpy as np


def conv3d_loops(x, w, b=None, stride=(1, 1, 1), pad=(0, 0, 0)):
    n, cin, d, h, wd = x.shape
    cout, _, kd, kh, kw = w.shape
    xp = np.zeros((n, cin, d + 2 * pad[0], h + 2 * pad[1], wd + 2 * pad[2]))
    xp[:, :, pad[0]:pad[0] + d, pad[1]:pad[1] + h, pad[2]:pad[2] + wd] = x
    do = (d + 2 * pad[0] - kd) // stride[0] + 1
    ho = (h + 2 * pad[1] - kh) // stride[1] + 1
    wo = (wd + 2 * pad[2] - kw) // stride[2] + 1
    out = np.zeros((n, cout, do, ho, wo))
    for i in range(n):
        for o in range(cout):
            for z in range(do):
                for y in range(ho):
                    for q in range(wo):
                        acc = 0.0 if b is None else float(b[o])
                        for c in range(cin):
                            for a in range(kd):
                                for e in range(kh):
                                    for f in range(kw):
                                        acc += (xp[i, c, z * stride[0] + a, y * stride[1] + e, q * stride[2] + f]
                                                * w[o, c, a, e, f])
                        out[i, o, z, y, q] = acc
    return out


def conv3d_transpose_loops(x, w, stride=(1, 1, 1), pad=(0, 0, 0)):
    """Stamp each input voxel times the kernel into the output, then crop."""
    n, cin, d, h, wd = x.shape
    _, cout, kd, kh, kw = w.shape
    full = ((d - 1) * stride[0] + kd, (h - 1) * stride[1] + kh, (wd - 1) * stride[2] + kw)
    out = np.zeros((n, cout) + full)
    for i in range(n):
        for c in range(cin):
            for z in range(d):
                for y in range(h):
                    for q in range(wd):
                        v = x[i, c, z, y, q]
                        for o in range(cout):
                            for a in range(kd):
                                for e in range(kh):
                                    for f in range(kw):
                                        out[i, o, z * stride[0] + a, y * stride[1] + e, q * stride[2] + f] += (
                                            v * w[c, o, a, e, f])
    return out[:, :, pad[0]:full[0] - pad[0], pad[1]:full[1] - pad[1], pad[2]:full[2] - pad[2]]


def maxpool3d_loops(x, window, stride):
    n, c, d, h, w = x.shape
    do = (d - window[0]) // stride[0] + 1
    ho = (h - window[1]) // stride[1] + 1
    wo = (w - window[2]) // stride[2] + 1
    out = np.zeros((n, c, do, ho, wo))
    for i, j, z, y, q in itertools.product(range(n), range(c), range(do), range(ho), range(wo)):
        best = -math.inf
        for a, e, f in itertools.product(range(window[0]), range(window[1]), range(window[2])):
            best = max(best, x[i, j, z * stride[0] + a, y * stride[1] + e, q * stride[2] + f])
        out[i, j, z, y, q] = best
    return out


def bilinear_loops(img, scale):
    """Upsample a single 2-d array with the half-pixel-centre, edge-clamped map."""
    h, w = img.shape
    out = np.zeros((h * scale, w * scale))
    for i in range(h * scale):
        sy = min(max((i + 0.5) / scale - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        ay = sy - y0
        for j in range(w * scale):
            sx = min(max((j + 0.5) / scale - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            ax = sx - x0
            out[i, j] = ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x1])
                         + ay * ((1 - ax) * img[y1, x0] + ax * img[y1, x1]))
    return out


def full_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Plain multi-head self-attention over a [L, C] sequence, per-position loops."""
    seq, ch = x.shape
    dh = ch // heads
    q = x @ wq + bq
    k = x @ wk + bk
    v = x @ wv + bv
    out = np.zeros((seq, ch))
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        for i in range(seq):
            scores = np.array([q[i, sl] @ k[j, sl] for j in range(seq)]) / math.sqrt(dh)
            scores = np.exp(scores - scores.max())
            weights = scores / scores.sum()
            out[i, sl] = sum(weights[j] * v[j, sl] for j in range(seq))
    return out @ wo + bo


def adam_scalar(x0, grad_fn, lr, steps, wd=0.0, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on one scalar, returning the trajectory."""
    x, m, v = x0, 0.0, 0.0
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(x) + wd * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        traj.append(x)
    return traj


def iou_counts(pred, truth):
    tp = fp = fn = 0
    for p, g in zip(np.ravel(pred), np.ravel(truth)):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif g and not p:
            fn += 1
    return tp, fp, fn


def brute_force_threshold(probs, truth, grid):
    best_t, best_iou = None, -1.0
    for t in grid:
        tp, fp, fn = iou_counts(np.ravel(probs) >= t, np.ravel(truth))
        iou = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
        if iou > best_iou:
            best_t, best_iou = t, iou
    return best_t, best_iou
