"""Power-of-two quantization: least-squares and gradient-trained step sizes.

The package provides per-tensor uniform symmetric quantizers whose step size
is constrained to a power of two, fitted either by alternating least squares
on the quantization error (with outlier masking and gradient-variance
weighting) or by straight-through gradient descent in the log2 domain (with
lower-error exponent selection and convergence freezing); plus batch-norm
folding, an integer-only inference simulator, scikit-learn style estimators,
a desk-scale experiment harness, and a command-line interface.
"""

from .core import (
    MAX_EXPONENT,
    MIN_EXPONENT,
    BnParams,
    Po2Scale,
    QuantConfig,
    fold_batchnorm,
    msqe,
    po2_project,
    qrange,
    quant_codes,
    quantize,
    round_half_away,
)
from .errors import (
    AccumulatorOverflowError,
    DegenerateCodesError,
    InvalidWeightsError,
    NonFiniteError,
    Po2QuantError,
    ScaleRangeError,
    TensorFormatError,
    UndefinedMetricError,
    ValidationError,
)
from .estimators import GradPo2Quantizer, MsqePo2Quantizer
from .fpsim import QuantizedLayer, float_reference_forward, int_forward, shift_round
from .gradscale import (
    GradScaleState,
    backward,
    effective_scale,
    forward,
    freeze,
    freeze_step,
    init_grad_scale,
    rtlm_select,
)
from .msqe_fit import (
    GvaState,
    MsqeFitConfig,
    fit_scale_msqe,
    fit_scale_msqe_trace,
    gva_init,
    gva_msqe_weights,
    gva_update,
    line_search,
    outlier_mask,
    weighted_fit_scale,
)
from .optim import AdamState, adam_init, adam_step, cosine_decay
from .tensor_io import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "MAX_EXPONENT",
    "MIN_EXPONENT",
    "BnParams",
    "Po2Scale",
    "QuantConfig",
    "fold_batchnorm",
    "msqe",
    "po2_project",
    "qrange",
    "quant_codes",
    "quantize",
    "round_half_away",
    "AccumulatorOverflowError",
    "DegenerateCodesError",
    "InvalidWeightsError",
    "NonFiniteError",
    "Po2QuantError",
    "ScaleRangeError",
    "TensorFormatError",
    "UndefinedMetricError",
    "ValidationError",
    "GradPo2Quantizer",
    "MsqePo2Quantizer",
    "QuantizedLayer",
    "float_reference_forward",
    "int_forward",
    "shift_round",
    "GradScaleState",
    "backward",
    "effective_scale",
    "forward",
    "freeze",
    "freeze_step",
    "init_grad_scale",
    "rtlm_select",
    "GvaState",
    "MsqeFitConfig",
    "fit_scale_msqe",
    "fit_scale_msqe_trace",
    "gva_init",
    "gva_msqe_weights",
    "gva_update",
    "line_search",
    "outlier_mask",
    "weighted_fit_scale",
    "AdamState",
    "adam_init",
    "adam_step",
    "cosine_decay",
    "read_tensor",
    "write_tensor",
    "__version__",
]
