"""Least-squares fitting of power-of-two step sizes.

The core fit alternates between quantizing at the current step size and
solving the one-dimensional least-squares problem for the step size given the
frozen codes, projecting onto a power of two each iteration:

    q      <- clip(round(w / delta), q_min, q_max)
    delta  <- (q . w) / (q . q)
    delta  <- po2_project(delta)

An optional exhaustive line search over neighboring exponents refines the
result. Weighted variants scale both sides of the regression by
sqrt(f_msqe), which supports outlier masking and gradient-variance-aware
(empirical Fisher) weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    MAX_EXPONENT,
    MIN_EXPONENT,
    Po2Scale,
    QuantConfig,
    _codes_at,
    msqe,
    po2_project,
    quantize,
)
from .errors import DegenerateCodesError, InvalidWeightsError, ValidationError
from .validation import (
    as_float_tensor,
    require_finite,
    require_int,
    require_nonempty,
    require_nonnegative,
    require_positive_scalar,
    require_same_shape,
)


@dataclass(frozen=True)
class MsqeFitConfig:
    """Knobs for the least-squares fit and its refinements.

    sigma_outlier = None disables outlier masking; math.inf keeps the mask
    logic but masks nothing (the no-suppression baseline).
    """

    n_iters: int = 2
    line_search_range: int = 2
    sigma_outlier: Optional[float] = None
    use_gva: bool = False

    def __post_init__(self):
        require_int(self.n_iters, "n_iters")
        require_int(self.line_search_range, "line_search_range")
        if self.n_iters < 1:
            raise ValidationError("n_iters must be >= 1")
        if self.line_search_range < 0:
            raise ValidationError("line_search_range must be >= 0")
        if self.sigma_outlier is not None and not self.sigma_outlier > 0:
            raise ValidationError("sigma_outlier must be positive when set")


@dataclass(frozen=True)
class GvaState:
    """Running second raw moment of a weight tensor's gradient.

    ``v`` is an exponential moving average of grad**2, the diagonal empirical
    Fisher used to weight the squared-error fit. Elements whose codes clip
    receive zero straight-through gradient, so their ``v`` decays toward zero
    and they drop out of the fit.
    """

    v: np.ndarray
    decay: float = 0.99
    step_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "v", as_float_tensor(self.v, "v"))
        require_nonnegative(self.v, "v")
        if not (0.0 < self.decay < 1.0):
            raise ValidationError(f"decay must lie in (0, 1), got {self.decay}")
        if self.step_count < 0:
            raise ValidationError("step_count must be non-negative")


def gva_init(shape, decay: float = 0.99) -> GvaState:
    """Fresh all-zero moment state for a tensor of the given shape."""
    return GvaState(v=np.zeros(shape, dtype=np.float64), decay=decay, step_count=0)


def gva_update(state: GvaState, grad) -> GvaState:
    """One moment update: v <- decay * v + (1 - decay) * grad**2."""
    g = as_float_tensor(grad, "grad")
    require_same_shape(g, state.v, "grad", "v")
    v = state.decay * state.v + (1.0 - state.decay) * g * g
    return GvaState(v=v, decay=state.decay, step_count=state.step_count + 1)


def gva_msqe_weights(state: GvaState, mask=None) -> np.ndarray:
    """Element-wise fit weights from the moment state.

    Before the first gradient arrives the weights fall back to all ones (an
    all-zero v would void the fit). A {0,1} mask, when given, multiplies in.
    """
    if state.step_count < 1:
        f = np.ones_like(state.v)
    else:
        f = state.v.copy()
    if mask is not None:
        m = as_float_tensor(mask, "mask")
        require_same_shape(m, state.v, "mask", "v")
        f = f * m
    return f


def outlier_mask(w, sigma_outlier: float) -> np.ndarray:
    """Binary mask that zeroes elements far out in the tensor's own scale.

    mask_j = 1 iff |w_j| < sigma_outlier * stddev(w), with the population
    standard deviation over all elements. Degenerate cases (constant tensor,
    sigma_outlier = inf) mask nothing.
    """
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    if not sigma_outlier > 0:
        raise ValidationError(f"sigma_outlier must be positive, got {sigma_outlier}")
    if math.isinf(sigma_outlier):
        return np.ones_like(arr)
    sd = float(np.std(arr))
    if sd == 0.0:
        return np.ones_like(arr)
    return (np.abs(arr) < sigma_outlier * sd).astype(np.float64)


def _fit_loop(
    w: np.ndarray,
    delta_init: float,
    n_iters: int,
    cfg: QuantConfig,
    sqrt_f: Optional[np.ndarray],
) -> tuple[Po2Scale, list[float]]:
    """Shared alternating fit; returns the final scale and raw per-iteration deltas."""
    w_scaled = w if sqrt_f is None else sqrt_f * w
    delta = delta_init
    raw_deltas = []
    scale = None
    for _ in range(n_iters):
        q = _codes_at(w, delta, cfg)
        q_scaled = q if sqrt_f is None else sqrt_f * q
        qq = float(np.sum(q_scaled * q_scaled))
        if qq == 0.0:
            raise DegenerateCodesError(
                f"all quantization codes are zero at delta={delta!r}", delta=delta
            )
        raw = float(np.sum(q_scaled * w_scaled)) / qq
        if not raw > 0.0:
            raise ValidationError(
                f"least-squares step size is not positive ({raw!r}); "
                "weights are too pathological to fit"
            )
        raw_deltas.append(raw)
        scale = po2_project(raw)
        delta = scale.value
    return scale, raw_deltas


def fit_scale_msqe_trace(
    w, delta_init: float, n_iters: int, cfg: QuantConfig
) -> tuple[Po2Scale, list[float]]:
    """As fit_scale_msqe, also returning the unprojected delta of each iteration."""
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    require_nonempty(arr, "w")
    if not np.any(arr != 0.0):
        raise ValidationError("w must contain at least one nonzero element")
    delta_init = require_positive_scalar(delta_init, "delta_init")
    require_int(n_iters, "n_iters")
    if n_iters < 1:
        raise ValidationError("n_iters must be >= 1")
    return _fit_loop(arr, delta_init, n_iters, cfg, None)


def fit_scale_msqe(w, delta_init: float, n_iters: int, cfg: QuantConfig) -> Po2Scale:
    """Fits a power-of-two step size by alternating least squares."""
    scale, _ = fit_scale_msqe_trace(w, delta_init, n_iters, cfg)
    return scale


def weighted_fit_scale(
    w, delta_init: float, n_iters: int, f_msqe, cfg: QuantConfig
) -> Po2Scale:
    """Least-squares fit with element-wise weights f_msqe.

    Codes and weights are pre-scaled by sqrt(f_msqe); each iteration
    requantizes the original tensor and rescales the fresh codes. With
    all-ones weights the result is bit-identical to fit_scale_msqe.
    """
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    require_nonempty(arr, "w")
    f = as_float_tensor(f_msqe, "f_msqe")
    require_same_shape(f, arr, "f_msqe", "w")
    require_nonnegative(f, "f_msqe")
    if not np.any(f > 0.0):
        raise InvalidWeightsError("f_msqe must have at least one positive element")
    delta_init = require_positive_scalar(delta_init, "delta_init")
    require_int(n_iters, "n_iters")
    if n_iters < 1:
        raise ValidationError("n_iters must be >= 1")
    scale, _ = _fit_loop(arr, delta_init, n_iters, cfg, np.sqrt(f))
    return scale


def line_search(
    w, init: Po2Scale, n_range: int, cfg: QuantConfig, weights=None
) -> Po2Scale:
    """Exhaustive (weighted) squared-error minimization over nearby exponents.

    Scans exponents init.exponent + k for k in [-n_range, n_range] and returns
    the minimizer; ties break toward the smaller exponent, so scanning in
    ascending order with strict improvement is exact.
    """
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    require_int(n_range, "n_range")
    if n_range < 0:
        raise ValidationError("n_range must be >= 0")
    if weights is not None:
        weights = as_float_tensor(weights, "weights")
        require_same_shape(weights, arr, "weights", "w")
        require_nonnegative(weights, "weights")
    best = None
    best_err = math.inf
    lo = max(init.exponent - n_range, MIN_EXPONENT)
    hi = min(init.exponent + n_range, MAX_EXPONENT)
    for exp in range(lo, hi + 1):
        cand = Po2Scale(exp)
        err = msqe(arr, quantize(arr, cand, cfg), weights)
        if err < best_err:
            best = cand
            best_err = err
    return best
