"""Loss, normalization, training loop, metrics and relaxation."""

from .config import TrainConfig
from .loss import loss
from .metrics import (
    DEFAULT_DISTANCE_THRESHOLDS,
    DEFAULT_FORCE_THRESHOLDS,
    MetricAccumulator,
    Metrics,
    adwt_afbt,
    compute_metrics,
    evaluate,
    predict_systems,
    structure_distance,
)
from .normalizer import Normalizer, fit_normalizer
from .relax import RelaxResult, model_force_fn, relax, relax_many
from .schedule import LRSchedule
from .trainer import CURVE_COLUMNS, TrainResult, train

__all__ = [
    "CURVE_COLUMNS",
    "DEFAULT_DISTANCE_THRESHOLDS",
    "DEFAULT_FORCE_THRESHOLDS",
    "LRSchedule",
    "MetricAccumulator",
    "Metrics",
    "Normalizer",
    "RelaxResult",
    "TrainConfig",
    "TrainResult",
    "adwt_afbt",
    "compute_metrics",
    "evaluate",
    "fit_normalizer",
    "loss",
    "model_force_fn",
    "predict_systems",
    "relax",
    "relax_many",
    "structure_distance",
    "train",
]
