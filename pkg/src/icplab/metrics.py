"""Per-run validity/efficiency measures and their cross-run aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Z95 = 1.96
STATISTICS = ("diff", "bias", "width", "mean_alpha")
# mean +- 1.96 * s / sqrt(R): normal-theory 95% interval for the mean
FORMULA_SE = "mean_pm_1.96se"
# mean +- 2 * s: spread of the per-run values themselves
FORMULA_SD = "mean_pm_2sd"
FORMULAS = (FORMULA_SE, FORMULA_SD)


@dataclass(frozen=True)
class RunMetrics:
    epsilon: float
    coverage: float
    bias: float
    diff: float
    width: float


@dataclass(frozen=True)
class AggregateMetrics:
    mean: float
    ci_low: float
    ci_high: float
    n_runs: int
    stat_name: str
    formula_id: str = FORMULA_SE

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def _as_mask(sets) -> np.ndarray:
    """Accept an (n, labels) boolean array or a sequence of PredictionSet."""
    if isinstance(sets, np.ndarray):
        mask = sets.astype(bool)
    else:
        sets = list(sets)
        mask = np.array([s.mask for s in sets], dtype=bool) if sets else np.zeros((0, 0), bool)
    if mask.ndim != 2:
        raise ValueError("prediction sets must form an (examples x labels) array")
    return mask


def coverage(sets, labels) -> float:
    mask = _as_mask(sets)
    labels = np.asarray(labels, dtype=np.int64)
    if mask.shape[0] == 0:
        raise ValueError("coverage of an empty test set")
    if labels.shape != (mask.shape[0],):
        raise ValueError(f"{labels.size} labels for {mask.shape[0]} prediction sets")
    return float(mask[np.arange(mask.shape[0]), labels].mean())


def bias_diff(coverage: float, epsilon: float) -> tuple[float, float]:
    if not 0.0 <= coverage <= 1.0:
        raise ValueError(f"coverage must lie in [0, 1], got {coverage}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    bias = coverage - (1.0 - epsilon)
    return bias, abs(bias)


def width(sets) -> float:
    mask = _as_mask(sets)
    if mask.shape[0] == 0:
        raise ValueError("width of an empty test set")
    return float(mask.sum(axis=1).mean())


def run_metrics(sets, labels, epsilon: float) -> RunMetrics:
    c = coverage(sets, labels)
    b, d = bias_diff(c, epsilon)
    return RunMetrics(float(epsilon), c, b, d, width(sets))


def _mean_sd(values):
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise ValueError(f"aggregation needs at least 2 runs, got {v.size}")
    if np.all(v == v[0]):
        return float(v[0]), 0.0, v.size
    # fsum is exactly rounded, so the result does not depend on run order
    mean = math.fsum(v) / v.size
    sd = math.sqrt(math.fsum((v - mean) ** 2) / (v.size - 1))
    return mean, sd, v.size


def aggregate(values, stat_name: str = "diff") -> AggregateMetrics:
    """Mean with a normal 95% interval, mean +- 1.96 * s / sqrt(R)."""
    mean, sd, n = _mean_sd(values)
    half = Z95 * sd / math.sqrt(n)
    return AggregateMetrics(mean, mean - half, mean + half, n, stat_name, FORMULA_SE)


def aggregate_sd(values, stat_name: str = "mean_alpha", k: float = 2.0) -> AggregateMetrics:
    """Mean with a +- k sample-standard-deviation band."""
    mean, sd, n = _mean_sd(values)
    return AggregateMetrics(mean, mean - k * sd, mean + k * sd, n, stat_name, FORMULA_SD)


def aggregate_with(formula_id: str, values, stat_name: str) -> AggregateMetrics:
    if formula_id == FORMULA_SE:
        return aggregate(values, stat_name)
    if formula_id == FORMULA_SD:
        return aggregate_sd(values, stat_name)
    raise ValueError(f"unknown interval formula {formula_id!r}")


def mean_calibration_alpha(scores) -> float:
    """Arithmetic mean of a calibration score multiset."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if s.size == 0:
        raise ValueError("no calibration scores")
    return float(s.mean())
