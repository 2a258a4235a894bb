from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NormalizationError


@dataclass(frozen=True)
class Normalizer:
    """Energy standardization; forces share the energy scale so F = -dE/dx holds in both spaces."""

    mean: float = 0.0
    std: float = 1.0
    mode: str = "standardize"

    def __post_init__(self):
        if self.mode not in ("standardize", "mean_only", "none"):
            raise NormalizationError(f"unknown normalization mode {self.mode!r}")
        if self.mode == "standardize" and not self.std > 0:
            raise NormalizationError("standard deviation must be positive")

    @property
    def scale(self) -> float:
        return self.std if self.mode == "standardize" else 1.0

    @property
    def shift(self) -> float:
        return 0.0 if self.mode == "none" else self.mean

    def apply_energy(self, e):
        return (e - self.shift) / self.scale

    def invert_energy(self, e):
        return e * self.scale + self.shift

    def apply_forces(self, f):
        return f / self.scale

    def invert_forces(self, f):
        return f * self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "mode": self.mode}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(float(data["mean"]), float(data["std"]), data["mode"])


def fit_normalizer(energies, mode: str = "standardize") -> Normalizer:
    """Mean and population standard deviation (ddof 0) of training energies."""
    e = np.asarray([float(x) for x in energies], dtype=np.float64)
    if mode == "none":
        return Normalizer(0.0, 1.0, "none")
    if mode == "standardize" and len(e) < 2:
        raise NormalizationError("need at least 2 systems to estimate a standard deviation")
    if len(e) < 1:
        raise NormalizationError("no energies to normalize")
    mean = float(e.mean())
    std = float(e.std(ddof=0))
    if mode == "standardize" and std == 0:
        raise NormalizationError("training energies have zero variance")
    return Normalizer(mean, std if std > 0 else 1.0, mode)
