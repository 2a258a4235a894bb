from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    The learning rate is ``lr * warmup * decay * plateau``: linear warmup over
    ``warmup_steps``, exponential decay by ``decay_rate`` every ``decay_steps``
    (disabled when ``decay_steps`` is 0), and a reduce-on-plateau factor on
    validation force MAE. ``eval_interval`` 0 means evaluate once per epoch.
    """

    energy_coef: float = 1.0
    force_coef: float = 100.0
    lr: float = 5e-4
    warmup_steps: int = 100
    decay_rate: float = 0.01
    decay_steps: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-6
    batch_size: int = 16
    max_epochs: int = 30
    max_steps: Optional[int] = None
    eval_interval: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float = 10.0
    normalization: str = "standardize"
    scaling_batches: int = 4
    throughput_warmup: int = 20
    energy_threshold: float = 0.02
    force_threshold: float = 0.03
    eval_batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("energy_coef", "force_coef"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.energy_coef == 0 and self.force_coef == 0:
            raise ConfigError("energy_coef and force_coef cannot both be zero")
        for name in ("batch_size", "eval_batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when given")
        if not 0 < self.plateau_factor <= 1:
            raise ConfigError("plateau_factor must be in (0, 1]")
        for name in ("warmup_steps", "decay_steps", "eval_interval", "plateau_patience", "scaling_batches",
                     "throughput_warmup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.normalization not in ("standardize", "mean_only", "none"):
            raise ConfigError("normalization must be standardize, mean_only or none")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)
