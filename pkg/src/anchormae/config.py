"""Run configuration: dataclass schemas, strict JSON loading, defaults.

``RunConfig`` mirrors the training, model, generator, and pruning configs in
one JSON document. Loading is strict: unknown keys are rejected with the
offending names so config typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_args, get_origin

from .errors import ConfigError, InvalidArgument
from .imageset import GeneratorConfig, SetKind
from .masking import STRATEGIES
from .model import GEO_MODES, ModelConfig
from .pruning import PruningConfig


@dataclass(frozen=True)
class Phase:
    kinds: tuple[str, ...]
    epochs: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"phase epochs must be >= 1, got {self.epochs}")
        for k in self.kinds:
            SetKind(k)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    base_lr: float = 1e-4
    warmup_steps: int = 0
    weight_decay: float = 0.0
    mask_ratio: float = 0.75
    mask_strategy: str = "aam"
    geo_mode: str = "full_gem"
    curriculum: tuple[Phase, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.mask_strategy not in STRATEGIES:
            raise ConfigError(
                f"mask_strategy {self.mask_strategy!r} not in {sorted(STRATEGIES)}")
        if self.geo_mode not in GEO_MODES:
            raise ConfigError(f"geo_mode {self.geo_mode!r} not in {GEO_MODES}")
        if self.curriculum and sum(p.epochs for p in self.curriculum) != self.epochs:
            raise ConfigError(
                f"phase epochs {[p.epochs for p in self.curriculum]} must sum to {self.epochs}")

    def phases(self) -> tuple[Phase, ...]:
        """Explicit curriculum, or the default hard switch: S2-L8 sets first,
        GF-S2 sets for the remaining epochs."""
        if self.curriculum:
            return self.curriculum
        first = math.ceil(self.epochs / 2)
        phases = [Phase(kinds=(SetKind.S2L8_CITY.value, SetKind.S2L8_RESERVE.value),
                        epochs=first)]
        if self.epochs - first:
            phases.append(Phase(kinds=(SetKind.GFS2.value,), epochs=self.epochs - first))
        return tuple(phases)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    pruning: PruningConfig = field(default_factory=PruningConfig)


def _coerce(value, anno):
    origin = get_origin(anno)
    if origin is tuple:
        args = get_args(anno)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0]) for v in value)
        return tuple(_coerce(v, a) for v, a in zip(value, args))
    if dataclasses.is_dataclass(anno):
        return from_dict(anno, value)
    if anno is float and isinstance(value, (int, float)):
        return float(value)
    return value


def from_dict(cls, data: dict):
    """Strict dataclass construction: every key must be a declared field."""
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)  # resolves postponed annotations
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {unknown}; "
                          f"known keys: {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        try:
            kwargs[name] = _coerce(value, hints[name])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, (ConfigError, InvalidArgument)):
                raise
            raise ConfigError(f"{cls.__name__}.{name}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def load_run_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(RunConfig, data)


def dump_run_config(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=1)
