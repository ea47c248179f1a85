"""Single-quantizer experiments on synthetic tensors.

Both experiments train one power-of-two scale by gradient descent on the
squared quantization error of a small Gaussian tensor, recording the applied
integer exponent per step:

* the perturbation experiment constructs the tensor so the scale-gradient
  equilibrium sits exactly at scale 1.0 (a ceil-mode transition boundary) and
  adds fresh Gaussian noise each step, exposing how often each rounding mode
  flips its exponent;
* the convergence experiment constructs the tensor so the unconstrained
  least-error step size is 0.9, which makes the applied exponent oscillate
  between -1 and 0 until the exponent average is frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..core import Po2Scale, QuantConfig, quantize, round_half_away
from ..errors import ValidationError
from ..gradscale import GradScaleState, backward, effective_scale, freeze, freeze_step
from ..optim import adam_init, adam_step
from ..validation import as_float_tensor, require_finite, require_int
from .metrics import MetricSeries

TOY_QUANT_CFG = QuantConfig(bit_width=4, signed=True)
DEFAULT_NOISE_SWEEP = (0.01, 0.05, 0.1)


@dataclass(frozen=True)
class ToyQuantizerExperimentConfig:
    """Configuration shared by the single-quantizer experiments."""

    n_elements: int = 256
    noise_sigma: float = 0.01
    init_delta_log2: float = -0.02
    steps: int = 300
    lr: float = 0.01
    mode: str = "ceil"
    seed: int = 0
    freeze_at: Optional[int] = None

    def __post_init__(self):
        require_int(self.n_elements, "n_elements")
        require_int(self.steps, "steps")
        require_int(self.seed, "seed")
        if self.n_elements < 1:
            raise ValidationError("n_elements must be positive")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if self.freeze_at is not None:
            require_int(self.freeze_at, "freeze_at")
            if self.freeze_at < 0:
                raise ValidationError("freeze_at must be non-negative")


def unconstrained_msqe_optimum(w, cfg: QuantConfig = TOY_QUANT_CFG) -> float:
    """Brute-force scan for the real-valued step size minimizing the squared error.

    Coarse geometric scan over the plausible range, then a fine linear scan
    around the coarse minimum. Resolution is far below 0.1% of the optimum.
    """
    arr = as_float_tensor(w, "w")
    require_finite(arr, "w")
    peak = float(np.max(np.abs(arr)))
    if peak == 0.0:
        raise ValidationError("w must contain a nonzero element")

    def err(delta: float) -> float:
        w_q = delta * np.clip(round_half_away(arr / delta), cfg.q_min, cfg.q_max)
        r = w_q - arr
        return float(np.sum(r * r))

    coarse = np.geomspace(peak / (cfg.q_max * 64.0), peak * 4.0, 1024)
    best = min(coarse, key=err)
    fine = np.linspace(best / 1.3, best * 1.3, 4096)
    return float(min(fine, key=err))


def _scale_gradient(w: np.ndarray, scale: Po2Scale, cfg: QuantConfig) -> float:
    """d/d(delta_log2) of the squared error at a pinned applied scale."""
    w_q = quantize(w, scale, cfg)
    upstream = 2.0 * (w_q - w)
    state = GradScaleState(delta_log2=float(scale.exponent), rounding_mode="round")
    _, grad = backward(w, state, upstream, cfg, scale=scale)
    return grad


def _equilibrium_factor(u: np.ndarray, cfg: QuantConfig) -> float:
    """Bisects for c such that the scale gradient of c*u vanishes at scale 1.0.

    At small c rounding pressure makes the gradient positive; at large c
    clipping pressure makes it negative, so a sign change always brackets.
    """
    one = Po2Scale(0)

    def grad_at(c: float) -> float:
        return _scale_gradient(c * u, one, cfg)

    lo = hi = 1.0
    while grad_at(lo) <= 0.0:
        lo /= 2.0
        if lo < 2.0**-40:
            raise ValidationError("failed to bracket the scale-gradient equilibrium")
    while grad_at(hi) > 0.0:
        hi *= 2.0
        if hi > 2.0**40:
            raise ValidationError("failed to bracket the scale-gradient equilibrium")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if grad_at(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _run_scale_descent(
    base: np.ndarray,
    cfg: ToyQuantizerExperimentConfig,
    rng: np.random.Generator,
    qcfg: QuantConfig,
) -> MetricSeries:
    """Adam on delta_log2 against the squared quantization error of the input."""
    state = GradScaleState(
        delta_log2=cfg.init_delta_log2, rounding_mode=cfg.mode
    )
    adam = adam_init()
    series = MetricSeries(name="scale_exponent")
    for step in range(cfg.steps):
        if cfg.noise_sigma > 0.0:
            w = base + cfg.noise_sigma * rng.standard_normal(base.shape)
        else:
            w = base
        if cfg.freeze_at is not None and step >= cfg.freeze_at and not state.frozen:
            state = freeze(state)
        observed = effective_scale(state, w, None, qcfg)
        state, used = freeze_step(state, observed)
        series.append(step, used.exponent)
        if not state.frozen:
            w_q = quantize(w, used, qcfg)
            upstream = 2.0 * (w_q - w)
            _, grad = backward(w, state, upstream, qcfg, scale=used)
            new_dlog2, adam = adam_step(state.delta_log2, grad, adam, cfg.lr)
            state = replace(state, delta_log2=new_dlog2)
    return series


def toy_rtlm_experiment(
    cfg: ToyQuantizerExperimentConfig, base=None
) -> MetricSeries:
    """Exponent trajectory of one quantizer under per-step input perturbations.

    The default base tensor is a Gaussian sample rescaled so the scale
    gradient vanishes exactly at scale 1.0, which is also the locally optimal
    power of two; with init_delta_log2 just below 0 the scale starts at a
    ceil-mode transition boundary. ``base`` overrides the constructed tensor.
    """
    rng = np.random.default_rng(cfg.seed)
    if base is None:
        u = rng.standard_normal(cfg.n_elements)
        base = _equilibrium_factor(u, TOY_QUANT_CFG) * u
    else:
        base = as_float_tensor(base, "base")
        require_finite(base, "base")
    return _run_scale_descent(base, cfg, rng, TOY_QUANT_CFG)


def toy_convergence_experiment(
    cfg: ToyQuantizerExperimentConfig, base=None, target_optimum: float = 0.9
) -> MetricSeries:
    """Exponent trajectory on a fixed input whose unconstrained optimum is 0.9.

    A Gaussian sample is rescaled so the brute-force optimal step size lands
    on ``target_optimum`` (the scan makes the construction exact up to scan
    resolution, well inside 0.9 +/- 0.02). The applied exponent then
    oscillates between -1 and 0; setting freeze_at pins it to the rounded
    exponent average from that step onward.
    """
    rng = np.random.default_rng(cfg.seed)
    if base is None:
        u = rng.standard_normal(cfg.n_elements)
        base = (target_optimum / unconstrained_msqe_optimum(u, TOY_QUANT_CFG)) * u
    else:
        base = as_float_tensor(base, "base")
        require_finite(base, "base")
    return _run_scale_descent(base, cfg, rng, TOY_QUANT_CFG)


def recompute_ema_exponent(
    series: MetricSeries, freeze_at: int, decay: float = 0.99
) -> int:
    """Offline replay of the exponent average over pre-freeze steps, rounded.

    Cross-check for the frozen exponent: replays ema <- decay*ema +
    (1-decay)*exponent from 0 over recorded steps before ``freeze_at``.
    """
    ema = 0.0
    for step, value in zip(series.steps, series.values):
        if step >= freeze_at:
            break
        ema = decay * ema + (1.0 - decay) * value
    return int(round_half_away(ema))
