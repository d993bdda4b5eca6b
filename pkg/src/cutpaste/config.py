"""Training configuration: JSON in, validated dataclasses out.

Parsing is fail-closed: unknown keys are errors (a typo must never silently
fall back to a default), every error names the offending key, and the fully
resolved config can be echoed back out and re-parsed to the same value.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .arrays import ValidationError
from .losses import CONSISTENCY_VARIANTS
from .synthesis import SynthConfig

TEACHER_MODES = ("copy", "ema")


def dataclass_from_dict(cls, data: dict, context: str = ""):
    """Build a flat dataclass of primitives from a dict, rejecting unknowns."""
    if not isinstance(data, dict):
        raise ValidationError(f"{context or cls.__name__}: expected a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        label = f"{context}{key}"
        if key not in fields:
            raise ValidationError(f"unknown config key {label!r}")
        ftype = fields[key].type
        if ftype in ("bool", bool):
            if not isinstance(value, bool):
                raise ValidationError(f"config key {label!r}: expected bool, got {type(value).__name__}")
        elif ftype in ("int", int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(f"config key {label!r}: expected int, got {type(value).__name__}")
        elif ftype in ("float", float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"config key {label!r}: expected number, got {type(value).__name__}")
            value = float(value)
        elif ftype in ("str", str):
            if not isinstance(value, str):
                raise ValidationError(f"config key {label!r}: expected string, got {type(value).__name__}")
        else:
            raise ValidationError(f"config key {label!r}: unsupported field type {ftype}")
        kwargs[key] = value
    return cls(**kwargs)


@dataclass
class TrainConfig:
    lambda_u: float = 0.01
    consistency: str = "mse"
    teacher: str = "ema"
    ema_decay: float = 0.99
    lr: float = 5e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_epochs: int = 10
    epochs: int = 100
    batch_labeled: int = 2
    batch_synthetic: int = 4
    val_fraction: float = 0.1
    patience: int = 15
    min_epochs: int = 70
    eval_threshold: float = 0.5
    seed: int = 0
    deterministic: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> "TrainConfig":
        if self.lambda_u < 0:
            raise ValidationError(f"config key 'lambda_u': must be >= 0, got {self.lambda_u}")
        if self.consistency not in CONSISTENCY_VARIANTS:
            raise ValidationError(
                f"config key 'consistency': must be one of {CONSISTENCY_VARIANTS}, got {self.consistency!r}"
            )
        if self.teacher not in TEACHER_MODES:
            raise ValidationError(f"config key 'teacher': must be one of {TEACHER_MODES}, got {self.teacher!r}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValidationError(f"config key 'ema_decay': must be in [0, 1], got {self.ema_decay}")
        if self.lr <= 0:
            raise ValidationError(f"config key 'lr': must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValidationError(f"config key 'weight_decay': must be >= 0, got {self.weight_decay}")
        for name in ("beta1", "beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValidationError(f"config key {name!r}: must be in [0, 1), got {beta}")
        if not 1 <= self.warmup_epochs < self.epochs:
            raise ValidationError(
                f"config key 'warmup_epochs': need 1 <= warmup ({self.warmup_epochs}) < epochs ({self.epochs})"
            )
        if self.batch_labeled < 1 or self.batch_synthetic < 1:
            raise ValidationError("config key 'batch_labeled'/'batch_synthetic': must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError(f"config key 'val_fraction': must be in [0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ValidationError(f"config key 'patience': must be >= 1, got {self.patience}")
        if self.min_epochs < 0:
            raise ValidationError(f"config key 'min_epochs': must be >= 0, got {self.min_epochs}")
        if not 0.0 < self.eval_threshold < 1.0:
            raise ValidationError(f"config key 'eval_threshold': must be in (0, 1), got {self.eval_threshold}")
        try:
            self.synth.validate()
        except ValidationError as exc:
            raise ValidationError(f"config key 'synth': {exc}") from None
        return self

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        merged = self.to_dict()
        for key, value in overrides.items():
            if key == "synth":
                if not isinstance(value, dict):
                    raise ValidationError("config key 'synth': expected a JSON object")
                merged["synth"].update(value)
            else:
                merged[key] = value
        return config_from_dict(merged)


def config_from_dict(data: dict) -> TrainConfig:
    if not isinstance(data, dict):
        raise ValidationError("config: expected a JSON object at top level")
    data = dict(data)
    synth_data = data.pop("synth", {})
    cfg = dataclass_from_dict(TrainConfig, data)
    cfg.synth = dataclass_from_dict(SynthConfig, synth_data, context="synth.")
    return cfg.validate()


def parse_config(path) -> TrainConfig:
    """Load, validate and fully resolve a JSON training config."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def echo_config(cfg: TrainConfig, path) -> None:
    """Write the resolved config; parse_config(echo) round-trips exactly."""
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
