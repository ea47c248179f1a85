"""Uniform symmetric quantization primitives with power-of-two step sizes.

All quantizers in this package share the same element-wise map

    w_q = delta * clip(round(w / delta), q_min, q_max)

with a per-tensor step size ``delta`` constrained to an exact power of two, so
that rescaling in integer arithmetic is a bit shift. This module provides the
code-range derivation, the rounding convention, the power-of-two projection,
the squared-error objective, and batch-norm folding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ScaleRangeError, ValidationError
from .validation import (
    as_float_tensor,
    require_finite,
    require_nonnegative,
    require_positive_scalar,
    require_same_shape,
)

# Exponents outside this range indicate a runaway fit, not a usable scale.
MIN_EXPONENT = -60
MAX_EXPONENT = 60


def round_half_away(x):
    """Rounds to the nearest integer with ties going away from zero.

    This is the rounding convention for the whole package: quantization codes
    and power-of-two exponents both use it. numpy's ``np.round`` (ties to
    even) must not be substituted; golden values depend on tie direction.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.copysign(np.floor(np.abs(x) + 0.5), x)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class QuantConfig:
    """Bit width and signedness of a code space.

    ``q_min``/``q_max`` are derived: signed uses the symmetric range
    [-2^(bw-1)+1, 2^(bw-1)-1] and unsigned uses [0, 2^bw - 1].
    """

    bit_width: int
    signed: bool = True

    def __post_init__(self):
        if isinstance(self.bit_width, bool) or int(self.bit_width) != self.bit_width:
            raise ValidationError(f"bit_width must be an integer, got {self.bit_width!r}")
        if self.bit_width < 2:
            raise ValidationError(f"bit_width must be >= 2, got {self.bit_width}")
        object.__setattr__(self, "bit_width", int(self.bit_width))
        object.__setattr__(self, "signed", bool(self.signed))

    @property
    def q_min(self) -> int:
        if self.signed:
            return -(2 ** (self.bit_width - 1)) + 1
        return 0

    @property
    def q_max(self) -> int:
        if self.signed:
            return 2 ** (self.bit_width - 1) - 1
        return 2**self.bit_width - 1


def qrange(cfg: QuantConfig) -> tuple[int, int]:
    """Returns the inclusive code range (q_min, q_max) for a config."""
    return cfg.q_min, cfg.q_max


@dataclass(frozen=True)
class Po2Scale:
    """A step size constrained to an exact power of two, stored by exponent."""

    exponent: int

    def __post_init__(self):
        if isinstance(self.exponent, bool) or int(self.exponent) != self.exponent:
            raise ValidationError(f"exponent must be an integer, got {self.exponent!r}")
        if not (MIN_EXPONENT <= self.exponent <= MAX_EXPONENT):
            raise ScaleRangeError(
                f"exponent {self.exponent} outside [{MIN_EXPONENT}, {MAX_EXPONENT}]"
            )
        object.__setattr__(self, "exponent", int(self.exponent))

    @property
    def value(self) -> float:
        return 2.0**self.exponent


def _codes_at(w: np.ndarray, delta: float, cfg: QuantConfig) -> np.ndarray:
    """Integer codes of ``w`` at an arbitrary positive step size."""
    x = w / delta
    return np.clip(round_half_away(x), cfg.q_min, cfg.q_max)


def _prepare(w, name: str) -> np.ndarray:
    arr = as_float_tensor(w, name)
    require_finite(arr, name)
    return arr


def quant_codes(w, scale: Po2Scale, cfg: QuantConfig) -> np.ndarray:
    """Integer codes: clip(round(w / scale), q_min, q_max), as int64."""
    arr = _prepare(w, "w")
    return _codes_at(arr, scale.value, cfg).astype(np.int64)


def quantize(w, scale: Po2Scale, cfg: QuantConfig) -> np.ndarray:
    """Quantized (dequantized-domain) values: scale * codes."""
    arr = _prepare(w, "w")
    return scale.value * _codes_at(arr, scale.value, cfg)


def po2_project(delta: float) -> Po2Scale:
    """Projects a positive step size onto the nearest power of two.

    The exponent is round_half_away(log2(delta)); an exponent outside the
    representable range raises ScaleRangeError rather than saturating.
    """
    delta = require_positive_scalar(delta, "delta")
    return Po2Scale(int(round_half_away(math.log2(delta))))


def msqe(w, w_q, weights=None) -> float:
    """Sum of (optionally weighted) squared quantization errors.

    Returns sum_j f_j * (w_q_j - w_j)^2 with f_j = 1 when ``weights`` is
    absent. Weights enter linearly and must be non-negative.
    """
    w = as_float_tensor(w, "w")
    w_q = as_float_tensor(w_q, "w_q")
    require_same_shape(w, w_q, "w", "w_q")
    r = w_q - w
    if weights is None:
        return float(np.sum(r * r))
    f = as_float_tensor(weights, "weights")
    require_same_shape(f, w, "weights", "w")
    require_nonnegative(f, "weights")
    return float(np.sum(f * r * r))


@dataclass(frozen=True)
class BnParams:
    """Per-channel batch normalization parameters for folding."""

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "moving_mean", "moving_var"):
            object.__setattr__(self, name, as_float_tensor(getattr(self, name), name))
        n = self.gamma.shape
        for name in ("beta", "moving_mean", "moving_var"):
            if getattr(self, name).shape != n:
                raise ValidationError("batch-norm parameter arrays must share one shape")
        if self.gamma.ndim != 1:
            raise ValidationError("batch-norm parameters must be one-dimensional")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if np.any(self.moving_var + self.epsilon <= 0):
            raise ValidationError("moving_var + epsilon must be positive")


def fold_batchnorm(weight, bias, bn: BnParams) -> tuple[np.ndarray, np.ndarray]:
    """Folds batch normalization into the preceding layer's weight and bias.

    ``weight`` has its output-channel axis first. With
    s_c = gamma_c / sqrt(var_c + eps):

        folded_weight[c, ...] = s_c * weight[c, ...]
        folded_bias[c]        = beta_c + s_c * (bias_c - mean_c)
    """
    weight = as_float_tensor(weight, "weight")
    bias = as_float_tensor(bias, "bias")
    n_ch = bn.gamma.shape[0]
    if weight.ndim < 1 or weight.shape[0] != n_ch:
        raise ValidationError(
            f"weight output-channel extent {weight.shape[:1]} does not match "
            f"batch-norm channel count {n_ch}"
        )
    if bias.shape != (n_ch,):
        raise ValidationError("bias length must equal the batch-norm channel count")
    s = bn.gamma / np.sqrt(bn.moving_var + bn.epsilon)
    folded_w = weight * s.reshape((n_ch,) + (1,) * (weight.ndim - 1))
    folded_b = bn.beta + s * (bias - bn.moving_mean)
    return folded_w, folded_b
