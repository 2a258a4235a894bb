"""Relative improvements with uncertainty and rank correlation."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from ..errors import ContractViolation, DomainError, StatisticsError

CONFIDENCE = 0.68


def relative_improvement(mae_baseline: float, mae_variant: float) -> float:
    """``baseline / variant - 1``; positive means the variant has lower error."""
    if not (mae_baseline > 0 and mae_variant > 0):
        raise DomainError(f"MAEs must be positive, got {mae_baseline!r} and {mae_variant!r}")
    return mae_baseline / mae_variant - 1.0


def improvement_interval(baseline_runs, variant_mae: float, confidence: float = CONFIDENCE):
    """Point estimate and symmetric interval for the relative improvement of a single-run variant.

    The baseline mean carries a Student-t half-width over the repeated runs;
    the variant is assigned the baseline's sample standard deviation. Both
    are propagated to first order through ``b / v - 1``. Returns
    ``(point, (low, high))``.
    """
    runs = np.asarray([float(x) for x in baseline_runs])
    if runs.size < 2:
        raise StatisticsError("need at least 2 baseline runs")
    mean = float(runs.mean())
    point = relative_improvement(mean, variant_mae)
    sd = float(runs.std(ddof=1))
    t = float(stats.t.ppf(0.5 + confidence / 2.0, runs.size - 1))
    d_mean = t * sd / math.sqrt(runs.size)
    d_variant = sd
    half = math.hypot(d_mean / variant_mae, mean * d_variant / variant_mae**2)
    return point, (point - half, point + half)


def _pair_counts(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractViolation("rankings must be 1-D and of equal length")
    if x.size < 2:
        raise ContractViolation("need at least 2 items to correlate")
    iu = np.triu_indices(x.size, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    prod = sx * sy
    concordant = int((prod > 0).sum())
    discordant = int((prod < 0).sum())
    ties_x = int((sx == 0).sum())
    ties_y = int((sy == 0).sum())
    return concordant, discordant, ties_x, ties_y, len(sx)


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall tau-b; NaN when either ranking is constant."""
    nc, nd, tx, ty, n0 = _pair_counts(x, y)
    denom = (n0 - tx) * (n0 - ty)
    if denom == 0:
        return float("nan")
    return (nc - nd) / math.sqrt(denom)
