"""Hierarchical encoder-decoder built from cuboid self-attention blocks.

Tensors inside the attention stack are channels-last: [N, T, H, W, C].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .params import Initializer

_MASK_VALUE = -1e9


# ---------------------------------------------------------- decompose/merge
def _strategies(strategy):
    if isinstance(strategy, str):
        strategy = (strategy,) * 3
    strategy = tuple(strategy)
    for s in strategy:
        if s not in ("local", "dilated"):
            raise ValueError(f"unknown decomposition strategy {s!r}")
    return strategy


@dataclass(frozen=True)
class CuboidLayout:
    shape: tuple          # (T, H, W) of the decomposed tensor
    cuboid_size: tuple
    strategy: tuple
    order: tuple          # current cuboid order; identity right after decompose


@dataclass
class Cuboids:
    data: Tensor          # [N, num_cuboids, cuboid_volume, C]
    layout: CuboidLayout

    def permuted(self, perm):
        """Reorder cuboids; merge refuses anything but the original order."""
        perm = np.asarray(perm)
        order = tuple(self.layout.order[i] for i in perm)
        layout = CuboidLayout(self.layout.shape, self.layout.cuboid_size, self.layout.strategy, order)
        return Cuboids(T.getitem(self.data, (slice(None), perm)), layout)


def required_padding(shape, cuboid_size):
    return tuple((-n) % b for n, b in zip(shape, cuboid_size))


def cuboid_decompose(x, cuboid_size, strategy="local"):
    """Split [N, T, H, W, C] into non-overlapping cuboids.

    ``local`` takes contiguous blocks; ``dilated`` takes every
    (extent / cuboid extent)-th element along each axis.
    """
    strategy = _strategies(strategy)
    n, *thw, c = x.shape
    cuboid_size = tuple(int(b) for b in cuboid_size)
    pads = required_padding(thw, cuboid_size)
    if any(pads):
        raise ValueError(f"axes {tuple(thw)} not divisible by cuboid {cuboid_size}; pad by {pads}")
    inter, nblock_axes, block_axes = [], [], []
    for i, (ext, b, s) in enumerate(zip(thw, cuboid_size, strategy)):
        if s == "local":
            inter += [ext // b, b]
            nblock_axes.append(1 + 2 * i)
            block_axes.append(2 + 2 * i)
        else:
            inter += [b, ext // b]
            nblock_axes.append(2 + 2 * i)
            block_axes.append(1 + 2 * i)
    y = T.reshape(x, (n, *inter, c))
    y = T.transpose(y, (0, *nblock_axes, *block_axes, 7))
    ncub = int(np.prod([e // b for e, b in zip(thw, cuboid_size)]))
    vol = int(np.prod(cuboid_size))
    layout = CuboidLayout(tuple(thw), cuboid_size, strategy, tuple(range(ncub)))
    return Cuboids(T.reshape(y, (n, ncub, vol, c)), layout)


def cuboid_merge(cuboids, original_shape, cuboid_size, strategy="local"):
    """Inverse of :func:`cuboid_decompose`."""
    strategy = _strategies(strategy)
    lay = cuboids.layout
    original_shape = tuple(int(v) for v in original_shape)
    thw = original_shape[1:4] if len(original_shape) == 5 else original_shape
    if tuple(thw) != lay.shape or tuple(cuboid_size) != lay.cuboid_size or strategy != lay.strategy:
        raise ValueError(
            f"merge parameters (shape={thw}, cuboid={tuple(cuboid_size)}, strategy={strategy}) "
            f"do not match decomposition {lay}")
    if lay.order != tuple(range(len(lay.order))):
        raise ValueError("cuboids are not in decomposition order; refusing to merge")
    n, ncub, vol, c = cuboids.data.shape
    nblocks = [e // b for e, b in zip(thw, cuboid_size)]
    y = T.reshape(cuboids.data, (n, *nblocks, *cuboid_size, c))
    perm = [0]
    for i, s in enumerate(strategy):
        perm += [1 + i, 4 + i] if s == "local" else [4 + i, 1 + i]
    perm.append(7)
    y = T.transpose(y, tuple(perm))
    return T.reshape(y, (n, *thw, c))


# ------------------------------------------------------------------ attention
def _split_heads(x, heads):
    *lead, length, c = x.shape
    y = T.reshape(x, (*lead, length, heads, c // heads))
    nd = y.ndim
    return T.transpose(y, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))


def _merge_heads(x):
    *lead, heads, length, dh = x.shape
    nd = x.ndim
    y = T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    return T.reshape(y, (*lead, length, heads * dh))


def multihead_attention(q, k, v, heads, mask=None):
    """Scaled dot-product attention on projected [..., L, C] inputs."""
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    dh = q.shape[-1] // heads
    scores = T.matmul(qh, T.transpose(kh, tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2)))
    scores = scores * (1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + Tensor(mask, dtype=scores.dtype)
    weights = T.softmax(scores, axis=-1)
    return _merge_heads(T.matmul(weights, vh))


def _lin(params, prefix, x):
    return T.linear(x, params[f"{prefix}.w"], params.params.get(f"{prefix}.b"))


def _ln(params, prefix, x):
    return T.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def _effective_cuboid(shape, cuboid_size):
    return tuple(min(b, e) for b, e in zip(cuboid_size, shape))


def cuboid_self_attention(x, params, prefix, cuboid_size, strategy, heads, glob=None):
    """Attention within each cuboid; globals (already normalized) join as extra keys/values."""
    n, t, h, w, c = x.shape
    cuboid_size = _effective_cuboid((t, h, w), cuboid_size)
    pads = required_padding((t, h, w), cuboid_size)
    xp = T.pad(x, ((0, 0),) + tuple((0, p) for p in pads) + ((0, 0),))
    padded_shape = xp.shape
    cubs = cuboid_decompose(xp, cuboid_size, strategy)
    xc = cubs.data
    q = _lin(params, f"{prefix}.q", xc)
    k = _lin(params, f"{prefix}.k", xc)
    v = _lin(params, f"{prefix}.v", xc)
    ncub, vol = xc.shape[1], xc.shape[2]
    mask = None
    if any(pads):
        valid = np.zeros((1,) + padded_shape[1:4] + (1,))
        valid[:, :t, :h, :w] = 1.0
        with T.no_grad():
            vmask = cuboid_decompose(Tensor(valid), cuboid_size, strategy).data.data[0, :, :, 0]
        mask = np.where(vmask > 0.5, 0.0, _MASK_VALUE).reshape(1, ncub, 1, 1, vol)
    if glob is not None and glob.shape[1] > 0:
        g = glob.shape[1]
        gk = T.broadcast_to(T.reshape(_lin(params, f"{prefix}.k", glob), (n, 1, g, c)), (n, ncub, g, c))
        gv = T.broadcast_to(T.reshape(_lin(params, f"{prefix}.v", glob), (n, 1, g, c)), (n, ncub, g, c))
        k = T.concat([k, gk], axis=2)
        v = T.concat([v, gv], axis=2)
        if mask is not None:
            mask = np.concatenate([mask, np.zeros((1, ncub, 1, 1, g))], axis=-1)
    att = multihead_attention(q, k, v, heads, mask)
    out = _lin(params, f"{prefix}.o", att)
    merged = cuboid_merge(Cuboids(out, cubs.layout), padded_shape, cuboid_size, strategy)
    if any(pads):
        merged = T.getitem(merged, (slice(None), slice(0, t), slice(0, h), slice(0, w)))
    return merged


def _global_update(params, prefix, xn, glob, heads):
    """Global vectors attend over every element of the tensor."""
    n = xn.shape[0]
    c = xn.shape[-1]
    flat = T.reshape(xn, (n, -1, c))
    gn = _ln(params, f"{prefix}.gln", glob)
    q = _lin(params, f"{prefix}.gq", gn)
    k = _lin(params, f"{prefix}.gk", flat)
    v = _lin(params, f"{prefix}.gv", flat)
    return glob + _lin(params, f"{prefix}.go", multihead_attention(q, k, v, heads))


def cuboid_attention_block(x, params, prefix, cuboid_size, strategy, heads, glob=None):
    """Pre-norm block: global update, cuboid attention, feed-forward, each residual.

    Returns ``(x, glob)`` with both shapes unchanged.
    """
    xn = _ln(params, f"{prefix}.ln1", x)
    glob_kv = None
    if glob is not None and glob.shape[1] > 0:
        glob = _global_update(params, prefix, xn, glob, heads)
        glob_kv = _ln(params, f"{prefix}.gln", glob)
    x = x + cuboid_self_attention(xn, params, prefix, cuboid_size, strategy, heads, glob_kv)
    hidden = T.gelu(_lin(params, f"{prefix}.ffn1", _ln(params, f"{prefix}.ln2", x)))
    x = x + _lin(params, f"{prefix}.ffn2", hidden)
    return x, glob


def init_block(init, prefix, c, ffn_ratio, with_globals):
    init.layer_norm(f"{prefix}.ln1", c)
    for name in ("q", "k", "v", "o"):
        init.linear(f"{prefix}.{name}", c, c)
    if with_globals:
        init.layer_norm(f"{prefix}.gln", c)
        for name in ("gq", "gk", "gv", "go"):
            init.linear(f"{prefix}.{name}", c, c)
    init.layer_norm(f"{prefix}.ln2", c)
    init.linear(f"{prefix}.ffn1", c, c * ffn_ratio)
    init.linear(f"{prefix}.ffn2", c * ffn_ratio, c)


# -------------------------------------------------------------------- model
def init_cuboidformer(config, seed=0):
    cfg = config
    init = Initializer(seed)
    cin = cfg.in_bands
    for i, u in enumerate(cfg.base_units):
        init.he(f"stem{i}.w", (u, cin, 1, 3, 3), cin * 9)
        init.zeros(f"stem{i}.b", (u,))
        cin = u
    c0 = cfg.width(0)
    init.linear("embed", cin, c0)
    h0 = cfg.level_extent(0)
    init.normal("pos", (cfg.in_frames, h0, h0, c0), 0.02)
    G = cfg.global_vectors
    for m in range(cfg.hierarchy_levels):
        c = cfg.width(m)
        for side in ("enc", "dec"):
            if G:
                init.normal(f"{side}{m}.glob", (G, c), 0.02)
            for d in range(cfg.blocks_per_level):
                init_block(init, f"{side}{m}.blk{d}", c, cfg.ffn_ratio, G > 0)
        init.linear(f"bridge{m}", cfg.in_frames * c, cfg.out_frames * c)
        if m + 1 < cfg.hierarchy_levels:
            init.layer_norm(f"merge{m}.ln", 4 * c)
            init.linear(f"merge{m}", 4 * c, cfg.width(m + 1), bias=False)
        if m > 0:
            init.linear(f"up{m}", c, 4 * cfg.width(m - 1))
    init.linear("out_up", c0, 4 * c0)
    init.layer_norm("head.ln", c0)
    init.linear("head", c0, 1)
    return init.params


def _patch_merge(params, prefix, x):
    n, t, h, w, c = x.shape
    x = T.pad(x, ((0, 0), (0, 0), (0, h % 2), (0, w % 2), (0, 0)))
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    y = T.reshape(x, (n, t, h2, 2, w2, 2, c))
    y = T.transpose(y, (0, 1, 2, 4, 3, 5, 6))
    y = T.reshape(y, (n, t, h2, w2, 4 * c))
    return _lin(params, prefix, _ln(params, f"{prefix}.ln", y))


def _pixel_shuffle_up(params, prefix, x, out_h, out_w):
    n, t, h, w, c = x.shape
    y = _lin(params, prefix, x)
    c2 = y.shape[-1] // 4
    y = T.reshape(y, (n, t, h, w, 2, 2, c2))
    y = T.transpose(y, (0, 1, 2, 4, 3, 5, 6))
    y = T.reshape(y, (n, t, 2 * h, 2 * w, c2))
    if (2 * h, 2 * w) != (out_h, out_w):
        y = T.getitem(y, (slice(None), slice(None), slice(0, out_h), slice(0, out_w)))
    return y


def _time_bridge(params, prefix, x, out_frames):
    # fold the input frames into channels and project to the output frames
    n, t, h, w, c = x.shape
    y = T.reshape(T.transpose(x, (0, 2, 3, 1, 4)), (n, h, w, t * c))
    y = T.reshape(_lin(params, prefix, y), (n, h, w, out_frames, c))
    return T.transpose(y, (0, 3, 1, 2, 4))


def _stack(params, cfg, prefix, x, n):
    G = cfg.global_vectors
    glob = None
    if G:
        g = params[f"{prefix}.glob"]
        glob = T.broadcast_to(T.reshape(g, (1,) + g.shape), (n,) + g.shape)
    for d in range(cfg.blocks_per_level):
        x, glob = cuboid_attention_block(x, params, f"{prefix}.blk{d}", cfg.cuboid_size,
                                         cfg.decomposition, cfg.heads, glob)
    return x


def cuboidformer_forward(config, params, x, mode="eval", rng=None):
    """Rain probabilities [N, out_frames, H*up, W*up] for input [N, bands, T, H, W]."""
    cfg = config
    if x.ndim != 5 or x.shape[1:] != (cfg.in_bands, cfg.in_frames, cfg.input_size, cfg.input_size):
        raise ValueError(
            f"input {x.shape} does not match config "
            f"(N, {cfg.in_bands}, {cfg.in_frames}, {cfg.input_size}, {cfg.input_size})")
    n = x.shape[0]
    h = x
    for i in range(len(cfg.base_units)):
        h = T.relu(T.conv3d(h, params[f"stem{i}.w"], params[f"stem{i}.b"], padding=(0, 1, 1)))
    h = T.maxpool3d(h, (1, 2, 2))
    h = T.transpose(h, (0, 2, 3, 4, 1))
    h = _lin(params, "embed", h) + params["pos"]

    skips = []
    for m in range(cfg.hierarchy_levels):
        h = _stack(params, cfg, f"enc{m}", h, n)
        skips.append(h)
        if m + 1 < cfg.hierarchy_levels:
            h = _patch_merge(params, f"merge{m}", h)

    top = cfg.hierarchy_levels - 1
    d = _time_bridge(params, f"bridge{top}", skips[top], cfg.out_frames)
    for m in range(top, -1, -1):
        if m < top:
            target = skips[m]
            d = _pixel_shuffle_up(params, f"up{m + 1}", d, target.shape[2], target.shape[3])
            d = d + _time_bridge(params, f"bridge{m}", target, cfg.out_frames)
        d = _stack(params, cfg, f"dec{m}", d, n)

    d = _pixel_shuffle_up(params, "out_up", d, cfg.input_size, cfg.input_size)
    logits = _lin(params, "head", _ln(params, "head.ln", d))
    logits = T.reshape(logits, logits.shape[:4])
    probs = T.sigmoid(logits)
    if cfg.upsample > 1:
        probs = T.upsample_bilinear2d(probs, cfg.upsample)
    return probs
