"""scikit-learn style wrappers around the scale-fitting quantizers.

Both estimators learn one power-of-two step size for the whole input tensor
in fit() and apply the element-wise quantizer in transform(). They follow the
usual conventions: constructor stores hyperparameters untouched, fitted
attributes carry a trailing underscore, get_params/set_params come from
BaseEstimator.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import QuantConfig, msqe, quantize
from .gradscale import GradScaleState, backward, effective_scale
from .msqe_fit import fit_scale_msqe, line_search, outlier_mask, weighted_fit_scale
from .optim import adam_init, adam_step


def _validate_input(X):
    return check_array(
        X, dtype=np.float64, ensure_2d=False, allow_nd=True, ensure_min_samples=0
    )


class MsqePo2Quantizer(TransformerMixin, BaseEstimator):
    """Least-squares fitted power-of-two quantizer.

    Parameters mirror the functional API: the alternating fit runs n_iters
    times from a dynamic-range initialization (or delta_init when given), an
    exhaustive line search scans +/- line_search_range exponents, and
    sigma_outlier (optionally) masks far-out elements from the objective.
    """

    def __init__(
        self,
        bit_width: int = 4,
        signed: bool = True,
        n_iters: int = 2,
        line_search_range: int = 2,
        sigma_outlier: Optional[float] = None,
        delta_init: Optional[float] = None,
    ):
        self.bit_width = bit_width
        self.signed = signed
        self.n_iters = n_iters
        self.line_search_range = line_search_range
        self.sigma_outlier = sigma_outlier
        self.delta_init = delta_init

    def fit(self, X, y=None):
        X = _validate_input(X)
        cfg = QuantConfig(self.bit_width, self.signed)
        weights = None
        if self.sigma_outlier is not None:
            weights = outlier_mask(X, self.sigma_outlier)
        if self.delta_init is not None:
            delta_init = float(self.delta_init)
        else:
            active = np.abs(X) if weights is None else np.abs(X)[weights > 0]
            peak = float(np.max(active)) if active.size else float(np.max(np.abs(X)))
            delta_init = peak / cfg.q_max if peak > 0 else 1.0
        if weights is None:
            scale = fit_scale_msqe(X, delta_init, self.n_iters, cfg)
        else:
            scale = weighted_fit_scale(X, delta_init, self.n_iters, weights, cfg)
        scale = line_search(X, scale, self.line_search_range, cfg, weights=weights)
        self.cfg_ = cfg
        self.scale_ = scale
        self.exponent_ = scale.exponent
        self.msqe_ = msqe(X, quantize(X, scale, cfg), weights)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return quantize(_validate_input(X), self.scale_, self.cfg_)


class GradPo2Quantizer(TransformerMixin, BaseEstimator):
    """Gradient-trained power-of-two quantizer.

    fit() minimizes the squared quantization error of X with Adam on the
    log2-domain step size, snapping with the chosen rounding mode each step.
    """

    def __init__(
        self,
        bit_width: int = 4,
        signed: bool = True,
        mode: str = "ceil",
        steps: int = 200,
        lr: float = 0.01,
        init_delta_log2: Optional[float] = None,
    ):
        self.bit_width = bit_width
        self.signed = signed
        self.mode = mode
        self.steps = steps
        self.lr = lr
        self.init_delta_log2 = init_delta_log2

    def fit(self, X, y=None):
        X = _validate_input(X)
        cfg = QuantConfig(self.bit_width, self.signed)
        if self.init_delta_log2 is not None:
            dlog2 = float(self.init_delta_log2)
        else:
            peak = float(np.max(np.abs(X))) if X.size else 0.0
            dlog2 = math.log2(peak / cfg.q_max) if peak > 0 else 0.0
        state = GradScaleState(delta_log2=dlog2, rounding_mode=self.mode)
        adam = adam_init()
        exponents = []
        for _ in range(int(self.steps)):
            scale = effective_scale(state, X, None, cfg)
            exponents.append(scale.exponent)
            w_q = quantize(X, scale, cfg)
            _, grad = backward(X, state, 2.0 * (w_q - X), cfg, scale=scale)
            new_dlog2, adam = adam_step(state.delta_log2, grad, adam, self.lr)
            state = replace(state, delta_log2=new_dlog2)
        scale = effective_scale(state, X, None, cfg)
        self.cfg_ = cfg
        self.state_ = state
        self.scale_ = scale
        self.exponent_ = scale.exponent
        self.delta_log2_ = state.delta_log2
        self.exponent_history_ = exponents
        self.msqe_ = msqe(X, quantize(X, scale, cfg))
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return quantize(_validate_input(X), self.scale_, self.cfg_)
