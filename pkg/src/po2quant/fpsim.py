"""Integer-only inference for a dense layer with power-of-two scales.

Because every scale is a power of two, rescaling the int accumulator to the
output code domain is a single arithmetic shift, with round-half-away-from-
zero on right shifts to match the quantizers' rounding. The float reference
path computes the same layer from dequantized float64 values; construction
bounds the accumulator so both paths are exact, making them bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Po2Scale, QuantConfig, round_half_away
from .errors import AccumulatorOverflowError, ValidationError

# Keep the worst-case post-shift magnitude below 2**52 so every intermediate
# value in the float64 reference is exactly representable.
_EXACT_LIMIT = 2**52

BIAS_CFG = QuantConfig(bit_width=8, signed=True)


def shift_round(acc: np.ndarray, shift: int) -> np.ndarray:
    """Multiplies int64 values by 2**shift; right shifts round half away from zero."""
    acc = np.asarray(acc, dtype=np.int64)
    if shift >= 0:
        return acc * (np.int64(1) << np.int64(shift))
    m = -shift
    mag = (np.abs(acc) + (np.int64(1) << np.int64(m - 1))) >> np.int64(m)
    return np.sign(acc) * mag


def _as_codes(x, cfg: QuantConfig, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind == "f" and np.all(arr == np.trunc(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValidationError(f"{name} must be integer codes")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < cfg.q_min or arr.max() > cfg.q_max):
        raise ValidationError(
            f"{name} codes outside [{cfg.q_min}, {cfg.q_max}]"
        )
    return arr


@dataclass(frozen=True)
class QuantizedLayer:
    """An integer dense layer: codes, their scales, and the output code space.

    The bias scale must equal weight_scale * input_scale (same exponent sum)
    so the bias adds directly into the accumulator.
    """

    weight_codes: np.ndarray
    weight_scale: Po2Scale
    bias_codes: np.ndarray
    bias_scale: Po2Scale
    input_scale: Po2Scale
    output_scale: Po2Scale
    output_cfg: QuantConfig
    weight_cfg: QuantConfig = QuantConfig(bit_width=8, signed=True)
    input_cfg: QuantConfig = QuantConfig(bit_width=8, signed=True)

    def __post_init__(self):
        w = _as_codes(self.weight_codes, self.weight_cfg, "weight_codes")
        b = _as_codes(self.bias_codes, BIAS_CFG, "bias_codes")
        if w.ndim != 2 or 0 in w.shape:
            raise ValidationError("weight_codes must be 2-D (out_features, in_features)")
        if b.shape != (w.shape[0],):
            raise ValidationError("bias_codes length must equal out_features")
        object.__setattr__(self, "weight_codes", w)
        object.__setattr__(self, "bias_codes", b)
        if self.bias_scale.exponent != self.weight_scale.exponent + self.input_scale.exponent:
            raise ValidationError(
                "bias_scale exponent must equal weight_scale + input_scale exponents "
                f"({self.bias_scale.exponent} != "
                f"{self.weight_scale.exponent} + {self.input_scale.exponent})"
            )
        x_peak = max(abs(self.input_cfg.q_min), self.input_cfg.q_max)
        acc_bound = int(np.max(np.abs(w).sum(axis=1)) * x_peak + np.max(np.abs(b)))
        shift = self.shift
        post_bound = acc_bound * 2 ** max(shift, 0)
        if post_bound > _EXACT_LIMIT:
            raise AccumulatorOverflowError(
                f"worst-case accumulator magnitude {post_bound} exceeds {_EXACT_LIMIT}"
            )

    @property
    def shift(self) -> int:
        return (
            self.weight_scale.exponent
            + self.input_scale.exponent
            - self.output_scale.exponent
        )


def int_forward(layer: QuantizedLayer, input_codes) -> np.ndarray:
    """Pure-integer layer evaluation returning output codes.

    acc = W_codes @ x_codes + bias_codes; the accumulator is shifted into the
    output scale and clipped to the output code range.
    """
    x = _as_codes(input_codes, layer.input_cfg, "input_codes")
    acc = x @ layer.weight_codes.T + layer.bias_codes
    out = shift_round(acc, layer.shift)
    return np.clip(out, layer.output_cfg.q_min, layer.output_cfg.q_max)


def float_reference_forward(layer: QuantizedLayer, input_codes) -> np.ndarray:
    """Float64 oracle: dequantize, run the layer, requantize the output."""
    x = _as_codes(input_codes, layer.input_cfg, "input_codes")
    xf = x.astype(np.float64) * layer.input_scale.value
    wf = layer.weight_codes.astype(np.float64) * layer.weight_scale.value
    bf = layer.bias_codes.astype(np.float64) * layer.bias_scale.value
    y = xf @ wf.T + bf
    codes = round_half_away(y / layer.output_scale.value)
    return np.clip(codes, layer.output_cfg.q_min, layer.output_cfg.q_max).astype(np.int64)
