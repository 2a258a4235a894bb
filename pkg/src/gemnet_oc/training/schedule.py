from __future__ import annotations

from dataclasses import dataclass


@dataclass
class LRSchedule:
    """Linear warmup, exponential decay and reduce-on-plateau, multiplied together."""

    base_lr: float
    warmup_steps: int = 0
    decay_rate: float = 0.01
    decay_steps: int = 0
    plateau_factor: float = 0.5
    patience: int = 3
    threshold: float = 1e-4
    min_lr: float = 1e-6
    plateau_scale: float = 1.0
    best: float = float("inf")
    bad_evals: int = 0

    def lr(self, step: int) -> float:
        """Learning rate for optimizer step ``step`` (0-based)."""
        warm = min(1.0, (step + 1) / self.warmup_steps) if self.warmup_steps else 1.0
        decay = self.decay_rate ** (step / self.decay_steps) if self.decay_steps else 1.0
        return max(self.base_lr * warm * decay * self.plateau_scale, self.min_lr)

    def observe(self, value: float) -> bool:
        """Record a validation score; returns True when the rate was reduced."""
        if value < self.best * (1.0 - self.threshold):
            self.best = value
            self.bad_evals = 0
            return False
        self.bad_evals += 1
        if self.bad_evals >= self.patience:
            self.plateau_scale *= self.plateau_factor
            self.bad_evals = 0
            return True
        return False

    def state(self) -> dict:
        return {"plateau_scale": self.plateau_scale, "best": self.best, "bad_evals": self.bad_evals}

    def load_state(self, state: dict) -> None:
        self.plateau_scale = float(state["plateau_scale"])
        self.best = float(state["best"])
        self.bad_evals = int(state["bad_evals"])
