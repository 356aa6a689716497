"""3D U-Net for multi-frame, multi-band inputs.

Encoder levels run 3x3x3 convolutions over (time, y, x) and pool only
spatially. Every encoder feature map is folded time-into-channels before it
reaches the decoder, so the decoder and the output head are purely spatial
and the head can emit one channel per lead time.
"""
import numpy as np

from .. import tensor as T
from .params import Initializer


def init_unet3d(config, seed=0):
    cfg = config
    init = Initializer(seed)
    cin = cfg.in_bands
    for level in range(cfg.depth):
        c = cfg.channels(level)
        init.he(f"enc{level}.conv1.w", (c, cin, 3, 3, 3), cin * 27)
        init.batch_norm(f"enc{level}.bn1", c)
        init.he(f"enc{level}.conv2.w", (c, c, 3, 3, 3), c * 27)
        init.batch_norm(f"enc{level}.bn2", c)
        cin = c
    cb = cfg.channels(cfg.depth - 1)
    init.he("bridge.w", (cb, cb * cfg.in_frames, 1, 1, 1), cb * cfg.in_frames)
    init.batch_norm("bridge.bn", cb)
    for level in reversed(range(cfg.depth - 1)):
        c, cup = cfg.channels(level), cfg.channels(level + 1)
        init.he(f"dec{level}.up.w", (cup, c, 1, 2, 2), cup)
        init.zeros(f"dec{level}.up.b", (c,))
        cat = c + c * cfg.in_frames
        init.he(f"dec{level}.conv1.w", (c, cat, 1, 3, 3), cat * 9)
        init.batch_norm(f"dec{level}.bn1", c)
        init.he(f"dec{level}.conv2.w", (c, c, 1, 3, 3), c * 9)
        init.batch_norm(f"dec{level}.bn2", c)
    c0 = cfg.channels(0)
    init.he("head.w", (cfg.out_frames, c0, 1, 1, 1), c0)
    init.zeros("head.b", (cfg.out_frames,))
    return init.params


def _check_input(cfg, x):
    if x.ndim != 5:
        raise ValueError(f"expected input [N, bands, T, H, W], got {x.shape}")
    _, b, t, h, w = x.shape
    if (b, t, h, w) != (cfg.in_bands, cfg.in_frames, cfg.input_size, cfg.input_size):
        raise ValueError(
            f"input {x.shape[1:]} does not match config "
            f"({cfg.in_bands}, {cfg.in_frames}, {cfg.input_size}, {cfg.input_size})")


def _conv_bn_relu(params, cfg, prefix, x, conv, bn, mode, padding):
    y = T.conv3d(x, params[f"{prefix}.{conv}.w"], padding=padding)
    state = params.bn_state(f"{prefix}.{bn}", cfg.bn_momentum)
    y = T.batch_norm(y, params[f"{prefix}.{bn}.gamma"], params[f"{prefix}.{bn}.beta"], state, mode)
    return T.relu(y)


def _fold_time(x):
    n, c, t, h, w = x.shape
    return T.reshape(x, (n, c * t, 1, h, w))


def unet3d_forward(config, params, x, mode="eval", rng=None):
    """Rain probabilities [N, out_frames, H*up, W*up] for input [N, bands, T, H, W]."""
    cfg = config
    _check_input(cfg, x)
    if mode == "train" and cfg.dropout_p > 0 and rng is None:
        rng = np.random.default_rng(0)
    skips = []
    h = x
    for level in range(cfg.depth):
        p = f"enc{level}"
        h = _conv_bn_relu(params, cfg, p, h, "conv1", "bn1", mode, 1)
        h = _conv_bn_relu(params, cfg, p, h, "conv2", "bn2", mode, 1)
        h = T.dropout(h, cfg.dropout_p, mode, rng=rng, channelwise=True)
        if level < cfg.depth - 1:
            skips.append(_fold_time(h))
            h = T.maxpool3d(h, (1, 2, 2))
    h = _bridge(params, cfg, h, mode)
    for level in reversed(range(cfg.depth - 1)):
        p = f"dec{level}"
        h = T.conv3d_transpose(h, params[f"{p}.up.w"], params[f"{p}.up.b"], stride=(1, 2, 2))
        h = T.concat([h, skips[level]], axis=1)
        h = _conv_bn_relu(params, cfg, p, h, "conv1", "bn1", mode, (0, 1, 1))
        h = _conv_bn_relu(params, cfg, p, h, "conv2", "bn2", mode, (0, 1, 1))
    logits = T.conv3d(h, params["head.w"], params["head.b"])
    n, k, _, hh, ww = logits.shape
    logits = T.reshape(logits, (n, k, hh, ww))
    if cfg.upsample > 1:
        logits = T.upsample_bilinear2d(logits, cfg.upsample)
    return T.sigmoid(logits)


def _bridge(params, cfg, h, mode):
    # [N, C, T, h, w] -> [N, C*T, 1, h, w] -> 1x1x1 conv back to C channels
    y = T.conv3d(_fold_time(h), params["bridge.w"])
    state = params.bn_state("bridge.bn", cfg.bn_momentum)
    return T.relu(T.batch_norm(y, params["bridge.bn.gamma"], params["bridge.bn.beta"], state, mode))
