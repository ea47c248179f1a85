"""Stability metrics recorded by the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UndefinedMetricError, ValidationError
from ..validation import as_float_tensor, require_same_shape


@dataclass
class MetricSeries:
    """A named per-step metric: parallel step and value lists.

    Steps must be strictly increasing; append enforces this incrementally.
    """

    name: str
    steps: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.steps) != len(self.values):
            raise ValidationError("steps and values must have equal length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValidationError("steps must be strictly increasing")

    def append(self, step: int, value: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValidationError(
                f"step {step} does not increase on {self.steps[-1]} in series {self.name!r}"
            )
        self.steps.append(int(step))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.steps)


def metric_quant_error_variance(w, w_q) -> float:
    """Population variance of the element-wise quantization error w_q - w."""
    w = as_float_tensor(w, "w")
    w_q = as_float_tensor(w_q, "w_q")
    require_same_shape(w, w_q, "w", "w_q")
    return float(np.var(w_q - w))


def metric_fluctuation_variance(w_q_t, w_q_prev) -> float:
    """Population variance of the step-to-step quantized-weight difference."""
    a = as_float_tensor(w_q_t, "w_q_t")
    b = as_float_tensor(w_q_prev, "w_q_prev")
    require_same_shape(a, b, "w_q_t", "w_q_prev")
    return float(np.var(a - b))


def metric_dynamic_range_ratio(w, channel_axis: int = 0) -> float:
    """Max over channels of max|w_c| divided by the min over channels."""
    arr = as_float_tensor(w, "w")
    if not (-arr.ndim <= channel_axis < arr.ndim):
        raise ValidationError(f"channel_axis {channel_axis} invalid for ndim {arr.ndim}")
    moved = np.moveaxis(arr, channel_axis, 0).reshape(arr.shape[channel_axis], -1)
    peaks = np.max(np.abs(moved), axis=1)
    if np.any(peaks == 0.0):
        raise UndefinedMetricError("a channel with all-zero weights has no dynamic range")
    return float(np.max(peaks) / np.min(peaks))


def metric_second_moment_ratio(v, mask) -> float:
    """mean(v over mask==0) / mean(v over mask==1), the outlier/inlier ratio."""
    v = as_float_tensor(v, "v")
    m = as_float_tensor(mask, "mask")
    require_same_shape(m, v, "mask", "v")
    outliers = v[m == 0.0]
    inliers = v[m == 1.0]
    if outliers.size == 0 or inliers.size == 0:
        raise UndefinedMetricError("second-moment ratio needs both outliers and inliers")
    return float(np.mean(outliers) / np.mean(inliers))


def metric_scale_transitions(series: MetricSeries) -> int:
    """Number of consecutive recorded steps where the value changes."""
    vals = np.asarray(series.values, dtype=np.float64)
    if vals.size < 2:
        return 0
    return int(np.count_nonzero(np.diff(vals) != 0.0))


def metric_scale_fluctuation(series: MetricSeries) -> float:
    """Mean |value(t) - value(t-1)| over consecutive recorded steps."""
    vals = np.asarray(series.values, dtype=np.float64)
    if vals.size < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(vals))))
