"""Architecture hyperparameters for both model families."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields


class ConfigError(ValueError):
    """A model configuration that cannot be built."""


def _as_triple(v):
    return tuple(int(x) for x in v)


@dataclass
class UNet3DConfig:
    """3D U-Net: encoder levels pool spatially, the time axis folds into channels at the bridge.

    Defaults are the desk-scale geometry; :meth:`paper` gives the competition geometry.
    """

    in_bands: int = 4
    in_frames: int = 4
    out_frames: int = 8
    start_filters: int = 8
    depth: int = 3
    dropout_p: float = 0.4
    input_size: int = 24
    upsample: int = 2
    bn_momentum: float = 0.1

    kind = "unet3d"

    def __post_init__(self):
        if self.start_filters < 1 or self.depth < 1:
            raise ConfigError("start_filters and depth must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.input_size % 2 ** (self.depth - 1):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2**(depth-1) = {2 ** (self.depth - 1)}")
        if self.upsample < 1:
            raise ConfigError("upsample factor must be >= 1")

    @property
    def output_size(self):
        return self.input_size * self.upsample

    def channels(self, level):
        return self.start_filters * 2 ** level

    @classmethod
    def paper(cls, **overrides):
        # 126 = 2 * 63 admits only one pooling step under the divisibility rule
        base = dict(in_bands=11, in_frames=4, out_frames=32, start_filters=32, depth=2,
                    dropout_p=0.4, input_size=126, upsample=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return {"kind": self.kind, **asdict(self)}


@dataclass
class CuboidConfig:
    """Hierarchical cuboid-attention encoder-decoder."""

    in_bands: int = 4
    in_frames: int = 4
    out_frames: int = 8
    input_size: int = 24
    base_units: list = field(default_factory=lambda: [8, 16])
    start_filters: int = 16
    hierarchy_levels: int = 2
    blocks_per_level: int = 1
    cuboid_size: tuple = (2, 3, 3)
    decomposition: str = "local"
    heads: int = 2
    global_vectors: int = 2
    ffn_ratio: int = 2
    upsample: int = 2

    kind = "cuboid"

    def __post_init__(self):
        self.base_units = [int(u) for u in self.base_units]
        self.cuboid_size = _as_triple(self.cuboid_size)
        if not self.base_units or min(self.base_units) < 1:
            raise ConfigError("base_units must be a non-empty list of positive widths")
        if self.hierarchy_levels < 1 or self.blocks_per_level < 1:
            raise ConfigError("hierarchy_levels and blocks_per_level must be >= 1")
        if self.decomposition not in ("local", "dilated"):
            raise ConfigError(f"unknown decomposition {self.decomposition!r}")
        if min(self.cuboid_size) < 1:
            raise ConfigError("cuboid extents must be >= 1")
        if self.input_size % 2:
            raise ConfigError(f"input_size {self.input_size} must be even for the initial downsample")
        for level in range(self.hierarchy_levels):
            if self.width(level) % self.heads:
                raise ConfigError(
                    f"heads={self.heads} does not divide attention width {self.width(level)} at level {level}")
        if self.global_vectors < 0 or self.upsample < 1 or self.ffn_ratio < 1:
            raise ConfigError("global_vectors >= 0, upsample >= 1 and ffn_ratio >= 1 required")

    def width(self, level):
        return self.start_filters * 2 ** level

    def level_extent(self, level):
        """Spatial extent at a hierarchy level (odd extents pad up before merging)."""
        n = self.input_size // 2
        for _ in range(level):
            n = (n + 1) // 2
        return n

    @property
    def output_size(self):
        return self.input_size * self.upsample

    @classmethod
    def paper(cls, version=1, **overrides):
        units = {1: [16, 64, 128], 2: [64, 128, 128]}[version]
        base = dict(in_bands=11, in_frames=4, out_frames=32, input_size=126, base_units=units,
                    start_filters=64, hierarchy_levels=2, blocks_per_level=2, cuboid_size=(2, 7, 7),
                    heads=4, global_vectors=8)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["cuboid_size"] = list(self.cuboid_size)
        return {"kind": self.kind, **d}


def config_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", None)
    cls = {"unet3d": UNet3DConfig, "cuboid": CuboidConfig}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown model kind {kind!r}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {kind} config fields: {sorted(unknown)}")
    return cls(**d)
