"""The two model families and a small dispatch layer over them."""
from .config import ConfigError, CuboidConfig, UNet3DConfig, config_from_dict
from .cuboid import (
    CuboidLayout, Cuboids, cuboid_attention_block, cuboid_decompose, cuboid_merge,
    cuboid_self_attention, cuboidformer_forward, init_cuboidformer, multihead_attention,
)
from .params import ParamSet, param_count
from .unet3d import init_unet3d, unet3d_forward


def init_model(config, seed=0):
    if isinstance(config, UNet3DConfig):
        return init_unet3d(config, seed)
    if isinstance(config, CuboidConfig):
        return init_cuboidformer(config, seed)
    raise ConfigError(f"unsupported config type {type(config).__name__}")


def forward(config, params, x, mode="eval", rng=None):
    if isinstance(config, UNet3DConfig):
        return unet3d_forward(config, params, x, mode, rng)
    if isinstance(config, CuboidConfig):
        return cuboidformer_forward(config, params, x, mode, rng)
    raise ConfigError(f"unsupported config type {type(config).__name__}")


__all__ = [
    "ConfigError", "CuboidConfig", "UNet3DConfig", "config_from_dict", "CuboidLayout", "Cuboids",
    "cuboid_attention_block", "cuboid_decompose", "cuboid_merge", "cuboid_self_attention",
    "cuboidformer_forward", "init_cuboidformer", "multihead_attention", "ParamSet", "param_count",
    "init_unet3d", "unet3d_forward", "init_model", "forward",
]
