"""Declarative run configuration, YAML I/O and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from salsa.surrogate import MveRegressorConfig, SurrogateConfig

METHODS = ("salsa", "random", "tabular-ts", "pool-al")
OBJECTIVE_KINDS = ("additive", "bilinear", "noisy-additive", "mpo", "external")


class ConfigError(ValueError):
    pass


@dataclass
class SpaceConfig:
    sizes: list[int] = field(default_factory=lambda: [100, 100])
    dim: int = 16
    seed: int = 0
    path: str | None = None
    subsample: list[int] | None = None
    subsample_seed: int = 0


@dataclass
class ComponentConfig:
    kind: str = "additive"
    seed: int = 0
    lam: float = 0.3
    noise_std: float = 0.0
    weight: float = 1.0
    lo: float = 0.0
    hi: float = 1.0


@dataclass
class ObjectiveConfig:
    kind: str = "additive"
    seed: int = 0
    lam: float = 0.3
    noise_std: float = 0.0
    scorer_cmd: str | None = None
    scorer_timeout: float = 600.0
    scorer_workers: int = 1
    components: list[ComponentConfig] = field(default_factory=list)


@dataclass
class StrategyConfig:
    kind: str = "ts"
    epsilon: float = 0.05
    beta: float = 2.0
    composer: str = "auto"  # auto | rejection | ranked


@dataclass
class RunConfig:
    method: str = "salsa"
    space: SpaceConfig = field(default_factory=SpaceConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    n_rounds: int = 10
    batch_size: int = 100
    rho_max: int | None = None
    seed: int = 0
    recall_k: int = 100
    enumeration_cap: int = 2_000_000
    warmup_trials: int = 2
    tabular_obs_var: float | None = None
    heatmap_draws: int = 0
    checkpoint: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def budget(self) -> int:
        return self.n_rounds * self.batch_size

    @property
    def attempts_cap(self) -> int:
        return self.rho_max if self.rho_max is not None else 10 * self.batch_size

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_rounds < 1 or self.batch_size < 1:
            raise ConfigError("n_rounds and batch_size must be >= 1")
        if self.rho_max is not None and self.rho_max < self.batch_size:
            raise ConfigError("rho_max must be >= batch_size")
        if self.objective.kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"objective.kind must be one of {OBJECTIVE_KINDS}")
        if self.objective.kind == "external" and not self.objective.scorer_cmd:
            raise ConfigError("external objective needs objective.scorer_cmd")
        if self.objective.kind == "mpo" and not self.objective.components:
            raise ConfigError("mpo objective needs at least one component")
        if self.warmup_trials < 1:
            raise ConfigError("warmup_trials must be >= 1")
        if len(self.space.sizes) < 2 and self.space.path is None:
            raise ConfigError("space needs at least 2 vectors")


def _build(cls, data: Any):
    if not dataclasses.is_dataclass(cls) or isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        sub = _dataclass_in(hint)
        if sub is not None and typing.get_origin(hint) is list:
            value = [_build(sub, v) for v in value]
        elif sub is not None and value is not None:
            value = _build(sub, value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _dataclass_in(hint):
    if dataclasses.is_dataclass(hint):
        return hint
    for arg in typing.get_args(hint):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {})


def config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        apply_override(data, item)
    return config_from_dict(data)


def apply_override(data: dict, item: str) -> None:
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    _check_key(parts)
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def _check_key(parts: list[str]) -> None:
    cls = RunConfig
    for i, p in enumerate(parts):
        if cls is None:
            raise ConfigError(f"override key {'.'.join(parts)!r} is too deep")
        hints = typing.get_type_hints(cls)
        if p not in hints:
            raise ConfigError(f"unknown config key {'.'.join(parts[: i + 1])!r}")
        cls = _dataclass_in(hints[p]) if typing.get_origin(hints[p]) is not list else None


def dump_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))


__all__ = [
    "ComponentConfig", "ConfigError", "MveRegressorConfig", "ObjectiveConfig", "RunConfig", "SpaceConfig",
    "StrategyConfig", "SurrogateConfig", "apply_override", "config_from_dict", "config_to_dict", "dump_config",
    "load_config",
]
