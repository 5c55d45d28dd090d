"""Run configuration: nested sections read from TOML, unknown keys rejected."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines.das import DASConfig
from .env.config import EnvConfig
from .model.loss import LossConfig
from .planner import SearchConfig
from .training.trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    """Network sizes; input and output widths follow from the case."""

    hidden: int = 64
    repr_width: int = 256
    dyn_width: int = 256
    reward_width: int = 64
    pred_width: int = 256
    proj_dim: int = 64
    activation: str = "relu"
    dynamics_grad_scale: float = 0.5


@dataclass
class PathsSection:
    case: str = "six_bus"
    series: str = ""  # empty: synthesize from the profiles section
    out: str = "runs/default"


@dataclass
class ProfilesSection:
    seed: int = 0
    days: int = 15
    eval_seed: int = 1000
    eval_days: int = 11


@dataclass
class EvalSection:
    seeds: int = 10
    days: int = 10  # evaluation episode i starts on day i % days


@dataclass
class RunConfig:
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelSection = field(default_factory=ModelSection)
    planner: SearchConfig = field(default_factory=SearchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    baseline: DASConfig = field(default_factory=DASConfig)
    profiles: ProfilesSection = field(default_factory=ProfilesSection)
    evaluation: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def __post_init__(self):
        # one master seed; the trainer reads its copy
        self.training.seed = self.seed

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(name, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if key not in known or name == "training.seed":
            hint = " (use the top-level seed)" if name == "training.seed" else ""
            raise ConfigError(f"unknown config key: {name}{hint}")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(type(current), value, name)
        else:
            kwargs[key] = _coerce(name, value, current)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from None


def config_from_dict(data):
    return _build(RunConfig, data, "")


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def override(cfg, **values):
    """Apply CLI flags on top of a loaded config (None means not given)."""
    if values.get("seed") is not None:
        cfg.seed = values["seed"]
        cfg.training.seed = values["seed"]
    if values.get("steps") is not None:
        cfg.training.total_steps = values["steps"]
    if values.get("workers") is not None:
        cfg.training.workers = values["workers"]
    for key in ("case", "series", "out"):
        if values.get(key) is not None:
            setattr(cfg.paths, key, values[key])
    return cfg
