"""Run configuration: TOML in, validated dataclasses out, and back."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import EngineConfig, parse_mode
from .harness import ScenarioSpec, WorldConfig
from .momentum import MomentumConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class EngineSection:
    momentum: float | str = "auto"
    gamma: float = 0.5
    tau: float = 0.1
    init: str = "source"
    kl_reduce: str = "mean"
    norm_eps: float = 1e-5
    kl_eps: float = 1e-12
    source_batch_size: int = 128


@dataclass(frozen=True)
class MomentumSection:
    grid: tuple[float, ...] = (1.0, 0.1, 0.01, 0.001)
    epsilon: float = 0.1
    # "lambda" in the TOML file
    lam: float = 0.01


@dataclass(frozen=True)
class RunSection:
    modes: tuple[str, ...] = ("source_only", "tbn", "tema_only", "full")
    batch_sizes: tuple[int, ...] = (200, 2)
    replicates: int = 1
    # 0 streams the whole scenario
    total_batches: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    world: WorldConfig = field(default_factory=WorldConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    engine: EngineSection = field(default_factory=EngineSection)
    momentum: MomentumSection = field(default_factory=MomentumSection)
    run: RunSection = field(default_factory=RunSection)

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.run.replicates)]

    def engine_config(self, mode: str) -> EngineConfig:
        e = self.engine
        return EngineConfig.for_mode(
            mode,
            momentum=e.momentum,
            gamma=e.gamma,
            tau=e.tau,
            init=e.init,
            kl_reduce=e.kl_reduce,
            norm_eps=e.norm_eps,
            kl_eps=e.kl_eps,
            relu=self.world.relu,
            source_batch_size=e.source_batch_size,
            momentum_config=MomentumConfig(self.momentum.grid, self.momentum.epsilon, self.momentum.lam),
        )

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "out_dir": self.out_dir}
        for name in _SECTIONS:
            section = {}
            for f in dataclasses.fields(getattr(self, name)):
                value = getattr(getattr(self, name), f.name)
                section[_ALIASES.get((name, f.name), f.name)] = list(value) if isinstance(value, tuple) else value
            out[name] = section
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


_SECTIONS = {
    "world": WorldConfig,
    "scenario": ScenarioSpec,
    "engine": EngineSection,
    "momentum": MomentumSection,
    "run": RunSection,
}
_ALIASES = {("momentum", "lam"): "lambda"}


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if key == "engine.momentum" and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if default:
            return tuple(_coerce(f"{key}[{i}]", v, default[0]) for i, v in enumerate(value))
        return tuple(value)
    return value


def _build_section(name: str, cls, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected a table")
    defaults = cls()
    by_key = {_ALIASES.get((name, f.name), f.name): f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in by_key:
            raise ConfigError(f"unknown key '{name}.{key}'")
        attr = by_key[key]
        kwargs[attr] = _coerce(f"{name}.{key}", value, getattr(defaults, attr))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    """Strictly validate a parsed document; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = _coerce("seed", value, 0)
        elif key == "out_dir":
            kwargs["out_dir"] = _coerce("out_dir", value, "")
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        else:
            raise ConfigError(f"unknown key '{key}'")
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if not cfg.run.modes:
        raise ConfigError("run.modes: need at least one mode")
    for mode in cfg.run.modes:
        try:
            parse_mode(mode)
        except ValueError as exc:
            raise ConfigError(f"run.modes: {exc}") from None
    if not cfg.run.batch_sizes or any(n < 1 for n in cfg.run.batch_sizes):
        raise ConfigError("run.batch_sizes: need one or more positive batch sizes")
    if cfg.run.replicates < 1:
        raise ConfigError("run.replicates: must be >= 1")
    if cfg.run.total_batches < 0:
        raise ConfigError("run.total_batches: must be >= 0")
    for c in cfg.scenario.corruptions:
        if not 0 <= c < cfg.world.n_corruptions:
            raise ConfigError(f"scenario.corruptions: unknown corruption id {c}")
    try:
        MomentumConfig(cfg.momentum.grid, cfg.momentum.epsilon, cfg.momentum.lam)
        for mode in cfg.run.modes:
            cfg.engine_config(mode)
    except ValueError as exc:
        raise ConfigError(f"engine: {exc}") from None


def loads(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return config_from_dict(data)


def load(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)
