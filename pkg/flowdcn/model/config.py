# flowdcn/model/config.py

# Standard library imports
from dataclasses import dataclass
from dataclasses import fields
from dataclasses import replace
from math import prod
from typing import Any
from typing import Dict
from typing import Optional

# Local imports
from flowdcn._constants import BlockStyle
from flowdcn._constants import PriorInit
from flowdcn._constants import TIMESTEP_FREQUENCIES
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ConfigException
from flowdcn.exceptions import ResolutionException
from flowdcn.utils.types import Resolution
from flowdcn.utils.types import Shape


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of a FlowDCN model.

    Attributes:
        layers: Number of blocks N
        hidden: Width d
        groups: Deformable groups G (must divide d)
        points: Sampling points K
        patch: Patch size p
        num_classes: Label count; label id num_classes is the null label
        in_channels: Image channels C
        train_resolution: Image (H, W) the model is trained at
        s_max: Scale cap; None means max of the training feature grid
        softmax_weights: Softmax-normalize dynamic weights
        learn_direction_prior: Train the direction prior
        learn_relative_scale: Predict per-pixel scale from features
        multiscale: Linearly spaced scale priors across groups (off: all zero)
        block_style: SwiGLU+RMSNorm or FFN(GELU)+LayerNorm
        prior_init: Grid priors or random priors
        dcn_projections: Wrap the deformable op in d -> d input/output projections
    """

    layers: int
    hidden: int
    groups: int
    points: int = 9
    patch: int = 2
    num_classes: int = 1000
    in_channels: int = 4
    train_resolution: Resolution = (32, 32)
    s_max: Optional[float] = None
    softmax_weights: bool = False
    learn_direction_prior: bool = False
    learn_relative_scale: bool = True
    multiscale: bool = True
    block_style: BlockStyle = BlockStyle.SWIGLU_RMSNORM
    prior_init: PriorInit = PriorInit.GRID
    dcn_projections: bool = True

    def __post_init__(self) -> None:
        for name in ("layers", "hidden", "groups", "points", "patch", "num_classes", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigException(f"{name} must be >= 1, got {getattr(self, name)}", name)
        if self.hidden % self.groups != 0:
            raise ConfigException(
                f"hidden={self.hidden} is not divisible by groups={self.groups}", "groups"
            )
        if self.s_max is not None and self.s_max <= 0:
            raise ConfigException(f"s_max must be positive, got {self.s_max}", "s_max")
        height, width = self.train_resolution
        if height % self.patch or width % self.patch:
            raise ResolutionException(height, width, self.patch)
        # Enum fields may arrive as plain strings from config files
        object.__setattr__(self, "block_style", BlockStyle(self.block_style))
        object.__setattr__(self, "prior_init", PriorInit(self.prior_init))

    @property
    def feature_grid(self) -> Resolution:
        return (self.train_resolution[0] // self.patch, self.train_resolution[1] // self.patch)

    @property
    def effective_s_max(self) -> float:
        if self.s_max is not None:
            return float(self.s_max)
        return float(max(self.feature_grid))

    @property
    def mlp_hidden(self) -> int:
        if self.block_style == BlockStyle.FFN_LAYERNORM:
            return 4 * self.hidden
        return int(8 * self.hidden / 3)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.in_channels

    def to_meta(self) -> Dict[str, Any]:
        """Flat key -> value mapping for checkpoint headers."""
        meta: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "train_resolution":
                value = f"{value[0]}x{value[1]}"
            elif isinstance(value, (BlockStyle, PriorInit)):
                value = value.value
            elif value is None:
                value = "auto"
            meta[f.name] = value
        return meta

    @classmethod
    def from_meta(cls, meta: Dict[str, str]) -> "ModelConfig":
        """Inverse of to_meta, from string values."""
        kwargs: Dict[str, Any] = {}
        for f in fields(cls):
            if f.name not in meta:
                continue
            raw = str(meta[f.name])
            if f.name == "train_resolution":
                h, w = raw.split("x")
                kwargs[f.name] = (int(h), int(w))
            elif f.name == "s_max":
                kwargs[f.name] = None if raw == "auto" else float(raw)
            elif f.type in (bool, "bool"):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif f.type in (int, "int"):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


# Named sizes. T is a desk-scale toy; S/B/L/XL are the full-size configurations.
NAMED_CONFIGS: Dict[str, Dict[str, int]] = {
    "T": {"layers": 2, "hidden": 64, "groups": 4, "points": 9, "patch": 1},
    "S": {"layers": 12, "hidden": 384, "groups": 6, "points": 9, "patch": 2},
    "B": {"layers": 12, "hidden": 768, "groups": 12, "points": 9, "patch": 2},
    "L": {"layers": 24, "hidden": 1024, "groups": 16, "points": 9, "patch": 2},
    "XL": {"layers": 28, "hidden": 1152, "groups": 16, "points": 9, "patch": 2},
}


def named_config(name: str, **overrides: Any) -> ModelConfig:
    """
    Build one of the named configurations.

    Args:
        name: One of T, S, B, L, XL
        **overrides: Any ModelConfig field

    Returns:
        ModelConfig

    Raises:
        ArgumentException: If the name is unknown
    """
    try:
        base = NAMED_CONFIGS[name.upper()]
    except KeyError:
        raise ArgumentException(
            f"Unknown model size '{name}'", "model", allowed=list(NAMED_CONFIGS)
        )
    return ModelConfig(**{**base, **overrides})


def with_overrides(config: ModelConfig, **overrides: Any) -> ModelConfig:
    """Copy of config with some fields replaced (validated again)."""
    return replace(config, **overrides)


def _linear(shapes: Dict[str, Shape], name: str, fan_in: int, fan_out: int) -> None:
    shapes[f"{name}.weight"] = (fan_in, fan_out)
    shapes[f"{name}.bias"] = (fan_out,)


def _norm(shapes: Dict[str, Shape], name: str, config: ModelConfig) -> None:
    shapes[f"{name}.gain"] = (config.hidden,)
    if config.block_style == BlockStyle.FFN_LAYERNORM:
        shapes[f"{name}.bias"] = (config.hidden,)


def parameter_shapes(config: ModelConfig) -> Dict[str, Shape]:
    """
    Ordered name -> shape table for every parameter of the model.

    No shape depends on the image resolution.

    Args:
        config: Model configuration

    Returns:
        Insertion-ordered dict, the canonical parameter order
    """
    d = config.hidden
    gk = config.groups * config.points
    shapes: Dict[str, Shape] = {}
    _linear(shapes, "x_embed", config.patch_dim, d)
    _linear(shapes, "t_embed.fc1", TIMESTEP_FREQUENCIES, d)
    _linear(shapes, "t_embed.fc2", d, d)
    shapes["y_embed.table"] = (config.num_classes + 1, d)
    for i in range(config.layers):
        block = f"blocks.{i}"
        _linear(shapes, f"{block}.adaln", d, 6 * d)
        _norm(shapes, f"{block}.norm1", config)
        if config.dcn_projections:
            _linear(shapes, f"{block}.dcn_in", d, d)
        _linear(shapes, f"{block}.dcn.weight", d, gk)
        _linear(shapes, f"{block}.dcn.offset", d, gk * 2)
        _linear(shapes, f"{block}.dcn.scale", d, config.groups)
        shapes[f"{block}.dcn.scale_prior"] = (config.groups,)
        shapes[f"{block}.dcn.direction_prior"] = (config.points, 2)
        if config.dcn_projections:
            _linear(shapes, f"{block}.dcn_out", d, d)
        _norm(shapes, f"{block}.norm2", config)
        if config.block_style == BlockStyle.FFN_LAYERNORM:
            _linear(shapes, f"{block}.mlp.fc1", d, config.mlp_hidden)
            _linear(shapes, f"{block}.mlp.fc2", config.mlp_hidden, d)
        else:
            _linear(shapes, f"{block}.mlp.gate", d, config.mlp_hidden)
            _linear(shapes, f"{block}.mlp.up", d, config.mlp_hidden)
            _linear(shapes, f"{block}.mlp.down", config.mlp_hidden, d)
    _linear(shapes, "final.adaln", d, 2 * d)
    _norm(shapes, "final.norm", config)
    _linear(shapes, "final.linear", d, config.patch_dim)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Total number of scalars, computed from the shape table without allocating."""
    return sum(prod(shape) for shape in parameter_shapes(config).values())
