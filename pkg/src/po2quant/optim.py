"""Adam optimizer and cosine learning-rate schedule for the training loops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ValidationError
from .validation import as_float_tensor, require_same_shape


@dataclass(frozen=True)
class AdamState:
    """First/second gradient moments plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "m", as_float_tensor(self.m, "m"))
        object.__setattr__(self, "v", as_float_tensor(self.v, "v"))
        require_same_shape(self.m, self.v, "m", "v")
        if np.any(self.v < 0):
            raise ValidationError("v must be non-negative element-wise")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0.0 <= b < 1.0):
                raise ValidationError(f"{name} must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.step < 0:
            raise ValidationError("step must be non-negative")


def adam_init(shape=(), beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    """Zero-moment state for a parameter of the given shape (default scalar)."""
    return AdamState(
        m=np.zeros(shape, dtype=np.float64),
        v=np.zeros(shape, dtype=np.float64),
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step=0,
    )


def adam_step(param, grad, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new_param, new_state).

    Scalar parameters go in and come out as floats; arrays stay arrays.
    """
    p = as_float_tensor(param, "param")
    g = as_float_tensor(grad, "grad")
    require_same_shape(g, p, "grad", "param")
    require_same_shape(p, state.m, "param", "m")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("grad contains non-finite elements")
    if not lr > 0:
        raise ValidationError(f"lr must be positive, got {lr}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_p = p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(
        m=m, v=v, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon, step=t
    )
    if new_p.ndim == 0:
        return float(new_p), new_state
    return new_p, new_state


def cosine_decay(step: int, total_steps: int, base_lr: float, alpha: float = 0.001) -> float:
    """Cosine-annealed learning rate with a relative floor ``alpha``."""
    if total_steps <= 0:
        raise ValidationError("total_steps must be positive")
    if not base_lr > 0:
        raise ValidationError("base_lr must be positive")
    frac = min(max(step, 0), total_steps) / total_steps
    cosine = 0.5 * (1.0 + math.cos(math.pi * frac))
    return base_lr * ((1.0 - alpha) * cosine + alpha)
