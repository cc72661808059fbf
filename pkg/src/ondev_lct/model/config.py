"""Variant descriptions for the LCT family."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass

from ..errors import ConfigError

VARIANT_RE = re.compile(r"^OnDev-LCT-(\d+)/(\d+)$")
GRID_ENCODERS = (1, 2, 4, 8)
GRID_STEM_CONVS = (1, 3)


@dataclass(frozen=True)
class LCTConfig:
    num_encoders: int = 1
    num_stem_convs: int = 1
    num_bottlenecks: int = 4
    embed_dim: int = 128
    heads: int = 4
    mlp_ratio: float = 1.0
    stem_channels: int = 64
    bottleneck_shrink: int = 64
    num_classes: int = 10
    input_shape: tuple = (32, 32, 3)
    dropout_p: float = 0.1
    attn_dropout_p: float = 0.1
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    ln_eps: float = 1e-5
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @property
    def num_tokens(self) -> int:
        h, w, _ = self.input_shape
        return (h // 4) * (w // 4)

    @property
    def name(self) -> str:
        return f"OnDev-LCT-{self.num_encoders}/{self.num_stem_convs}"

    def validate(self) -> None:
        positive = ("num_encoders", "num_stem_convs", "num_bottlenecks", "embed_dim", "heads",
                    "stem_channels", "bottleneck_shrink", "num_classes")
        for key in positive:
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{key} must be a positive int, got {v!r}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if not self.mlp_ratio > 0 or self.mlp_hidden < 1:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} gives an empty MLP hidden layer")
        if len(self.input_shape) != 3 or min(self.input_shape) <= 0:
            raise ConfigError(f"input_shape must be (H, W, C) with positive extents, got {self.input_shape}")
        h, w, _ = self.input_shape
        if h % 4 or w % 4:
            raise ConfigError(f"input height and width must be divisible by 4, got {h}x{w}")
        for key in ("dropout_p", "attn_dropout_p"):
            v = getattr(self, key)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1), got {v}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")

    # -- (de)serialization ---------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LCTConfig":
        d = dict(d)
        variant = d.pop("variant", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if variant is not None:
            base = parse_variant(variant)
            d = {**base, **d}
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def variant(cls, name: str, **overrides) -> "LCTConfig":
        return cls(**{**parse_variant(name), **overrides})

    def replace(self, **changes) -> "LCTConfig":
        return dataclasses.replace(self, **changes)


def parse_variant(name: str, strict_grid: bool = True) -> dict:
    """``"OnDev-LCT-4/3"`` -> ``{"num_encoders": 4, "num_stem_convs": 3}``."""
    m = VARIANT_RE.match(str(name))
    if not m:
        raise ConfigError(f"variant {name!r} does not match OnDev-LCT-<L>/<M>")
    enc, stem = int(m.group(1)), int(m.group(2))
    if strict_grid and (enc not in GRID_ENCODERS or stem not in GRID_STEM_CONVS):
        raise ConfigError(
            f"variant {name!r} is outside the named grid L in {GRID_ENCODERS}, M in {GRID_STEM_CONVS}; "
            "use an explicit model section instead")
    return {"num_encoders": enc, "num_stem_convs": stem}


def grid_variants() -> list[str]:
    return [f"OnDev-LCT-{l}/{m}" for m in GRID_STEM_CONVS for l in GRID_ENCODERS]
