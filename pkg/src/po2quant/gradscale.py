"""Gradient-trained power-of-two step sizes.

The step size is learned in the log2 domain: a real parameter ``delta_log2``
is snapped to an integer exponent each forward pass (by ceil, round, or a
lower-error selection between the two neighbors), and the backward pass uses
the straight-through convention for the round function. Near convergence the
exponent can be frozen to the rounded exponential moving average of its own
history, which removes residual oscillation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import Po2Scale, QuantConfig, quantize, round_half_away
from .errors import ValidationError
from .msqe_fit import GvaState, gva_msqe_weights
from .validation import (
    as_float_tensor,
    require_finite,
    require_nonnegative,
    require_same_shape,
)

ROUNDING_MODES = ("ceil", "round", "rtlm")


@dataclass(frozen=True)
class GradScaleState:
    """Learnable log2 step size plus its freeze bookkeeping.

    ``ema_log2`` tracks the exponential moving average of the applied integer
    exponent. Once ``frozen`` is set the averaged exponent takes over and
    ``delta_log2`` updates must be suppressed by the training loop.
    """

    delta_log2: float
    rounding_mode: str = "ceil"
    ema_log2: float = 0.0
    ema_decay: float = 0.99
    frozen: bool = False
    last_po2: Optional[Po2Scale] = None

    def __post_init__(self):
        if self.rounding_mode not in ROUNDING_MODES:
            raise ValidationError(
                f"rounding_mode must be one of {ROUNDING_MODES}, got {self.rounding_mode!r}"
            )
        if not math.isfinite(self.delta_log2):
            raise ValidationError("delta_log2 must be finite")
        if not self.frozen and not (0.0 < self.ema_decay < 1.0):
            raise ValidationError("ema_decay must lie in (0, 1)")
        object.__setattr__(self, "delta_log2", float(self.delta_log2))
        object.__setattr__(self, "ema_log2", float(self.ema_log2))


def init_grad_scale(
    w,
    cfg: QuantConfig,
    rounding_mode: str = "ceil",
    ema_decay: float = 0.99,
) -> GradScaleState:
    """State initialized from the tensor's dynamic range: log2(max|w| / q_max)."""
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    if peak > 0.0:
        delta_log2 = math.log2(peak / cfg.q_max)
    else:
        delta_log2 = 0.0
    return GradScaleState(
        delta_log2=delta_log2, rounding_mode=rounding_mode, ema_decay=ema_decay
    )


def rtlm_select(w, delta_log2: float, v_w, cfg: QuantConfig) -> Po2Scale:
    """Picks the lower-weighted-error neighbor exponent of a fractional log2 scale.

    Elements already outside the unrounded scale's clipping range are masked
    out of the comparison: mask_j = 1 iff |w_j| < q_max * 2**delta_log2. Each
    side's error is ||mask * v_w * (Q(w, side) - w)||^2 (the weight factor
    multiplies the residual inside the squared norm). Floor wins ties; an
    integer delta_log2 short-circuits to that exponent.
    """
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    v = as_float_tensor(v_w, "v_w")
    require_same_shape(v, arr, "v_w", "w")
    require_nonnegative(v, "v_w")
    lo = math.floor(delta_log2)
    hi = math.ceil(delta_log2)
    if lo == hi:
        return Po2Scale(lo)
    mask = (np.abs(arr) < cfg.q_max * 2.0**delta_log2).astype(np.float64)
    weighted = mask * v
    errs = []
    for exp in (lo, hi):
        r = weighted * (quantize(arr, Po2Scale(exp), cfg) - arr)
        errs.append(float(np.sum(r * r)))
    return Po2Scale(hi) if errs[1] < errs[0] else Po2Scale(lo)


def effective_scale(
    state: GradScaleState,
    w,
    gva: Optional[GvaState] = None,
    cfg: Optional[QuantConfig] = None,
) -> Po2Scale:
    """The integer-exponent scale the quantizer applies this step.

    Frozen states ignore the rounding mode and return the rounded EMA
    exponent. rtlm mode weights its comparison with the moment state's fit
    weights when one is supplied, all ones otherwise.
    """
    if state.frozen:
        return Po2Scale(int(round_half_away(state.ema_log2)))
    if state.rounding_mode == "ceil":
        return Po2Scale(math.ceil(state.delta_log2))
    if state.rounding_mode == "round":
        return Po2Scale(int(round_half_away(state.delta_log2)))
    if cfg is None:
        raise ValidationError("rtlm mode requires a QuantConfig")
    arr = as_float_tensor(w, "w")
    v_w = np.ones_like(arr) if gva is None else gva_msqe_weights(gva)
    return rtlm_select(arr, state.delta_log2, v_w, cfg)


def forward(
    w, state: GradScaleState, cfg: QuantConfig, gva: Optional[GvaState] = None
) -> tuple[np.ndarray, Po2Scale]:
    """Quantizes with the current effective scale; returns (w_q, scale_used)."""
    scale = effective_scale(state, w, gva, cfg)
    return quantize(w, scale, cfg), scale


def backward(
    w,
    state: GradScaleState,
    upstream,
    cfg: QuantConfig,
    scale: Optional[Po2Scale] = None,
    gva: Optional[GvaState] = None,
) -> tuple[np.ndarray, float]:
    """Straight-through gradients for the input and the log2 step size.

    With x_j = w_j / scale and the round-based clip test:

        unclipped_j   iff q_min <= round(x_j) <= q_max
        grad_w_j      = upstream_j if unclipped else 0
        g_j           = round(x_j) - x_j   (unclipped)
                        q_max              (clipped high)
                        q_min              (clipped low)
        grad_delta_log2 = ln(2) * 2**delta_log2 * sum_j upstream_j * g_j

    The 2**delta_log2 * ln(2) factor is the exact derivative of the
    exponential reparameterization. Frozen states contribute zero scale
    gradient by contract.
    """
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    up = as_float_tensor(upstream, "upstream")
    require_same_shape(up, arr, "upstream", "w")
    if scale is None:
        scale = effective_scale(state, arr, gva, cfg)
    x = arr / scale.value
    r = round_half_away(x)
    unclipped = (r >= cfg.q_min) & (r <= cfg.q_max)
    grad_w = np.where(unclipped, up, 0.0)
    if state.frozen:
        return grad_w, 0.0
    g = np.where(unclipped, r - x, np.where(r > cfg.q_max, float(cfg.q_max), float(cfg.q_min)))
    grad_delta_log2 = math.log(2.0) * 2.0**state.delta_log2 * float(np.sum(up * g))
    return grad_w, grad_delta_log2


def freeze(state: GradScaleState) -> GradScaleState:
    """Switches a state to the frozen regime at its current averaged exponent."""
    if state.frozen:
        return state
    exp = Po2Scale(int(round_half_away(state.ema_log2)))
    return replace(state, frozen=True, last_po2=exp)


def freeze_step(state: GradScaleState, observed: Po2Scale) -> tuple[GradScaleState, Po2Scale]:
    """One step of exponent averaging, or the frozen scale once frozen.

    Not frozen: ema <- decay * ema + (1 - decay) * observed.exponent, and the
    observed scale passes through. Frozen: the decay acts as 1 (the average
    stays put) and the rounded-average scale is returned.
    """
    if state.frozen:
        return state, Po2Scale(int(round_half_away(state.ema_log2)))
    ema = state.ema_decay * state.ema_log2 + (1.0 - state.ema_decay) * observed.exponent
    return replace(state, ema_log2=ema, last_po2=observed), observed
