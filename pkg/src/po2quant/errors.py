"""Exception types shared across the package.

The taxonomy separates bad inputs (ValidationError and subclasses, mapped to
exit code 1 by the CLI) from numeric failures that arise mid-computation
(DegenerateCodesError, ScaleRangeError, mapped to exit code 2).
"""

from __future__ import annotations


class Po2QuantError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(Po2QuantError, ValueError):
    """Invalid argument, configuration, shape, or file content."""


class NonFiniteError(ValidationError):
    """An input tensor contains NaN or infinity where finite values are required."""


class InvalidWeightsError(ValidationError):
    """An element-wise weighting tensor is unusable (e.g. all zeros)."""


class UndefinedMetricError(ValidationError):
    """A metric has no defined value for the given input (e.g. empty group)."""


class AccumulatorOverflowError(ValidationError):
    """A quantized layer could overflow its integer accumulator."""


class TensorFormatError(ValidationError):
    """A tensor file is malformed or truncated."""


class ScaleRangeError(Po2QuantError, OverflowError):
    """A power-of-two exponent left the representable range.

    Raised instead of saturating so that runaway scale growth surfaces as an
    explicit failure rather than a silent clamp.
    """


class DegenerateCodesError(Po2QuantError, ArithmeticError):
    """All quantization codes vanished during a least-squares scale fit.

    Carries the step size that produced the all-zero codes in ``delta``.
    """

    def __init__(self, message: str, delta: float):
        super().__init__(message)
        self.delta = float(delta)
