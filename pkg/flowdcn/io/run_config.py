# flowdcn/io/run_config.py

"""
Plain-text run configuration: one `key = value` per line, `#` starts a comment.

Every accepted key is declared in RUN_CONFIG_KEYS. Unknown keys, malformed lines,
duplicates and unparsable values are collected and reported together in one
RunConfigException.
"""

# Standard library imports
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Union

# Local imports
from flowdcn._constants import DEFAULT_CFG_SCALE
from flowdcn._constants import DEFAULT_ODE_STEPS
from flowdcn._constants import DEFAULT_SDE_STEPS
from flowdcn._constants import BlockStyle
from flowdcn._constants import DatasetKind
from flowdcn._constants import PriorInit
from flowdcn._constants import Solver
from flowdcn.exceptions import RunConfigException
from flowdcn.exceptions import ValidationException
from flowdcn.flow.trainer import TrainConfig
from flowdcn.model.config import NAMED_CONFIGS
from flowdcn.model.config import ModelConfig
from flowdcn.model.config import named_config
from flowdcn.sampler import SampleSpec
from flowdcn.utils.types import Resolution


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _optional_float(raw: str) -> Optional[float]:
    return None if raw.lower() in ("none", "auto", "off") else float(raw)


def _optional_int(raw: str) -> Optional[int]:
    return None if raw.lower() == "none" else int(raw)


def _choice(values: List[str]) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        if raw not in values:
            raise ValueError(f"expected one of {', '.join(values)}, got {raw!r}")
        return raw

    return parse


@dataclass(frozen=True)
class KeySpec:
    """One accepted key: parser, default and a one-line description."""

    name: str
    parse: Callable[[str], Any]
    default: Any
    doc: str


_SPECS = [
    KeySpec("dataset", _choice([k.value for k in DatasetKind]), "gauss8", "Training dataset"),
    KeySpec("dataset.size", int, 2000, "Number of generated training samples"),
    KeySpec("dataset.seed", int, 0, "Dataset generation seed"),
    KeySpec("model", _choice(list(NAMED_CONFIGS)), "T", "Named model size (T, S, B, L, XL)"),
    KeySpec("model.layers", _optional_int, None, "Override: number of blocks"),
    KeySpec("model.hidden", _optional_int, None, "Override: hidden width d"),
    KeySpec("model.groups", _optional_int, None, "Override: deformable groups G"),
    KeySpec("model.points", _optional_int, None, "Override: sampling points K (default 9)"),
    KeySpec("model.patch", _optional_int, None, "Override: patch size"),
    KeySpec("model.s_max", _optional_float, None, "Scale cap; auto = max of the feature grid"),
    KeySpec("model.softmax_weights", _parse_bool, False, "Softmax-normalize dynamic weights"),
    KeySpec("model.learn_direction_prior", _parse_bool, False, "Train the direction prior"),
    KeySpec("model.learn_relative_scale", _parse_bool, True, "Predict per-pixel scales"),
    KeySpec("model.multiscale", _parse_bool, True, "Linearly spaced scale priors across groups"),
    KeySpec(
        "model.block_style",
        _choice([s.value for s in BlockStyle]),
        BlockStyle.SWIGLU_RMSNORM.value,
        "swiglu_rmsnorm or ffn_layernorm",
    ),
    KeySpec(
        "model.prior_init",
        _choice([p.value for p in PriorInit]),
        PriorInit.GRID.value,
        "grid or random priors",
    ),
    KeySpec("model.dcn_projections", _parse_bool, True, "Input/output projections around the DCN"),
    KeySpec("train.lr", float, 1e-4, "Adam learning rate"),
    KeySpec("train.beta1", float, 0.9, "Adam beta1"),
    KeySpec("train.beta2", float, 0.999, "Adam beta2"),
    KeySpec("train.adam_eps", float, 1e-8, "Adam epsilon"),
    KeySpec("train.batch_size", int, 128, "Samples per step"),
    KeySpec("train.steps", int, 20000, "Training steps"),
    KeySpec("train.seed", int, 0, "Seed for batches, noise, times and label dropout"),
    KeySpec("train.class_dropout", float, 0.1, "Probability of dropping a label to null"),
    KeySpec("train.ema_decay", _optional_float, None, "EMA decay; none disables EMA"),
    KeySpec("train.log_every", int, 100, "Metrics log interval in steps"),
    KeySpec(
        "sample.solver",
        _choice([s.value for s in Solver]),
        Solver.EULER_ODE.value,
        "Default solver",
    ),
    KeySpec("sample.ode_steps", int, DEFAULT_ODE_STEPS, "Default Euler ODE steps"),
    KeySpec("sample.sde_steps", int, DEFAULT_SDE_STEPS, "Default Euler-Maruyama steps"),
    KeySpec("sample.cfg_scale", float, DEFAULT_CFG_SCALE, "Default guidance scale"),
]

RUN_CONFIG_KEYS: Dict[str, KeySpec] = {spec.name: spec for spec in _SPECS}

SAMPLE_KEYS = ("sample.solver", "sample.ode_steps", "sample.sde_steps", "sample.cfg_scale")

_MODEL_OVERRIDES = ("layers", "hidden", "groups", "points", "patch")
_MODEL_FLAGS = (
    "s_max",
    "softmax_weights",
    "learn_direction_prior",
    "learn_relative_scale",
    "multiscale",
    "block_style",
    "prior_init",
    "dcn_projections",
)
_TRAIN_FIELDS = (
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "steps",
    "seed",
    "class_dropout",
    "ema_decay",
    "log_every",
)


@dataclass
class RunConfig:
    """Parsed run configuration. `values` holds every key, defaults included."""

    values: Dict[str, Any] = field(
        default_factory=lambda: {name: spec.default for name, spec in RUN_CONFIG_KEYS.items()}
    )
    source: Optional[str] = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def dataset(self) -> DatasetKind:
        return DatasetKind(self.values["dataset"])

    def model_config(
        self, in_channels: int, num_classes: int, train_resolution: Resolution
    ) -> ModelConfig:
        """
        Model configuration for data with the given channels, classes and resolution.

        Args:
            in_channels: Image channels
            num_classes: Number of labels
            train_resolution: (H, W) of the training data

        Returns:
            ModelConfig from the named size plus any overrides
        """
        overrides: Dict[str, Any] = {
            name: self.values[f"model.{name}"]
            for name in _MODEL_OVERRIDES
            if self.values[f"model.{name}"] is not None
        }
        overrides.update({name: self.values[f"model.{name}"] for name in _MODEL_FLAGS})
        return named_config(
            self.values["model"],
            in_channels=in_channels,
            num_classes=num_classes,
            train_resolution=train_resolution,
            **overrides,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: self.values[f"train.{name}"] for name in _TRAIN_FIELDS})

    def sample_spec(self, **overrides: Any) -> SampleSpec:
        """SampleSpec with the configured defaults; `overrides` win."""
        solver = Solver(overrides.pop("solver", None) or self.values["sample.solver"])
        steps = overrides.pop("steps", None)
        if steps is None:
            key = "sample.ode_steps" if solver == Solver.EULER_ODE else "sample.sde_steps"
            steps = self.values[key]
        cfg_scale = overrides.pop("cfg_scale", None)
        if cfg_scale is None:
            cfg_scale = self.values["sample.cfg_scale"]
        return SampleSpec(solver=solver, steps=steps, cfg_scale=cfg_scale, **overrides)

    def sample_meta(self) -> Dict[str, Any]:
        """The sampler defaults, keyed as in the file, for checkpoint metadata."""
        return {key: self.values[key] for key in SAMPLE_KEYS}

    @classmethod
    def from_sample_meta(cls, meta: Mapping[str, str]) -> "RunConfig":
        """
        Defaults with the sampler keys found in checkpoint metadata applied.

        Args:
            meta: Checkpoint metadata (string values)

        Returns:
            RunConfig; sampler keys absent from `meta` keep their defaults

        Raises:
            RunConfigException: If a stored sampler value does not parse
        """
        config = cls()
        bad: Dict[str, str] = {}
        for key in SAMPLE_KEYS:
            if key in meta:
                try:
                    config.values[key] = RUN_CONFIG_KEYS[key].parse(meta[key])
                except ValueError as e:
                    bad[key] = str(e)
        if bad:
            raise RunConfigException(bad, "checkpoint meta")
        return config

    def to_lines(self) -> List[str]:
        """Every key as `key = value`, in declaration order."""
        lines = []
        for name, value in self.values.items():
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = str(value).lower()
            else:
                text = str(value)
            lines.append(f"{name} = {text}")
        return lines


def parse_run_config(text: str, source: Optional[str] = None) -> RunConfig:
    """
    Parse run configuration text.

    Args:
        text: File contents
        source: Optional file name for error messages

    Returns:
        RunConfig with defaults for keys not given

    Raises:
        RunConfigException: Listing every bad key or line
    """
    config = RunConfig(source=source)
    bad: Dict[str, str] = {}
    seen: Dict[str, int] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad[f"line {number}"] = f"expected 'key = value', got {raw_line.strip()!r}"
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        spec = RUN_CONFIG_KEYS.get(key)
        if spec is None:
            bad[key] = f"unknown key (line {number})"
            continue
        if key in seen:
            bad[key] = f"duplicate key (lines {seen[key]} and {number})"
            continue
        seen[key] = number
        try:
            config.values[key] = spec.parse(raw)
        except ValueError as e:
            bad[key] = f"{e} (line {number})"
    if bad:
        raise RunConfigException(bad, source)
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and parse a run configuration file.

    Raises:
        RunConfigException: Listing every bad key or line
    """
    return parse_run_config(Path(path).read_text(encoding="utf-8"), str(path))


def validate_run_config(config: RunConfig) -> None:
    """
    Build every typed config once so range errors surface before a run starts.

    Raises:
        RunConfigException: Listing each section that failed
    """
    bad: Dict[str, str] = {}
    try:
        config.model_config(1, 1, (16, 16))
    except ValidationException as e:
        bad[f"model.{e.field_name}" if e.field_name else "model"] = e.message
    try:
        config.train_config()
    except ValidationException as e:
        bad[f"train.{e.field_name}" if e.field_name else "train"] = e.message
    try:
        config.sample_spec()
    except ValidationException as e:
        bad[f"sample.{e.field_name}" if e.field_name else "sample"] = e.message
    if bad:
        raise RunConfigException(bad, config.source)
