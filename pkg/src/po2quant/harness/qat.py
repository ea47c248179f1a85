"""Quantization-aware training of a small dense network on synthetic clusters.

The model is dense(no bias) -> batchnorm -> relu -> dense -> softmax. Batch
norm is refolded into the first layer every step using the current batch
statistics; the folded weights and bias are what the weight quantizers see.
Weights use either the least-squares family (with optional outlier masking
and gradient-variance weighting) or the gradient-trained family; activations
always use the gradient-trained family; biases are quantized at 8 bits.
Mid-training outlier injection multiplies the largest few weights of the
second layer by a growing factor, which is the mechanism study for scale
divergence versus outlier-robust fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..core import (
    BnParams,
    Po2Scale,
    QuantConfig,
    fold_batchnorm,
    po2_project,
    quantize,
    round_half_away,
)
from ..errors import (
    DegenerateCodesError,
    NonFiniteError,
    ScaleRangeError,
    ValidationError,
)
from ..gradscale import (
    GradScaleState,
    backward,
    effective_scale,
    freeze,
    freeze_step,
    init_grad_scale,
)
from ..msqe_fit import (
    GvaState,
    fit_scale_msqe,
    gva_init,
    gva_msqe_weights,
    gva_update,
    line_search,
    outlier_mask,
    weighted_fit_scale,
)
from ..optim import adam_init, adam_step, cosine_decay
from ..validation import require_int
from .metrics import (
    MetricSeries,
    metric_fluctuation_variance,
    metric_quant_error_variance,
    metric_second_moment_ratio,
)

_BN_EPS = 1e-5
_MOVING_DECAY = 0.99


@dataclass(frozen=True)
class QatDataConfig:
    """Gaussian cluster classification data."""

    n_samples: int = 10000
    n_features: int = 16
    n_classes: int = 4
    cluster_radius: float = 4.0
    val_fraction: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class QatModelConfig:
    """Model size, training schedule, and the outlier-injection protocol."""

    hidden: int = 32
    steps: int = 400
    batch_size: int = 128
    lr: float = 0.01
    lr_alpha: float = 0.001
    seed: int = 0
    freeze_fraction: Optional[float] = None
    eval_every: int = 50
    inject_outliers_at: Optional[int] = None
    inject_duration: int = 100
    inject_factor: float = 50.0
    inject_top_fraction: float = 0.001

    def __post_init__(self):
        require_int(self.steps, "steps")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.freeze_fraction is not None and not (0.0 < self.freeze_fraction <= 1.0):
            raise ValidationError("freeze_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class QatQuantizerConfig:
    """Quantizer family and flags applied to the model.

    family "none" trains the float baseline. "msqe" refits the weight scales
    every step by (optionally weighted) least squares; "grad" learns them by
    gradient descent. Activations use the gradient-trained family whenever
    quantization is on.
    """

    family: str = "none"
    weight_bits: int = 4
    act_bits: int = 4
    bias_bits: int = 8
    n_iters: int = 2
    line_search_range: int = 2
    sigma_outlier: Optional[float] = None
    use_gva: bool = False
    mode: str = "ceil"
    scale_lr: Optional[float] = None

    def __post_init__(self):
        if self.family not in ("none", "msqe", "grad"):
            raise ValidationError("family must be one of none|msqe|grad")


def make_cluster_dataset(cfg: QatDataConfig):
    """Deterministic Gaussian clusters split into train and validation parts."""
    rng = np.random.default_rng(cfg.seed)
    means = rng.standard_normal((cfg.n_classes, cfg.n_features))
    means *= cfg.cluster_radius / np.linalg.norm(means, axis=1, keepdims=True)
    y = rng.integers(0, cfg.n_classes, cfg.n_samples)
    X = means[y] + rng.standard_normal((cfg.n_samples, cfg.n_features))
    n_val = int(cfg.val_fraction * cfg.n_samples)
    return X[n_val:], y[n_val:], X[:n_val], y[:n_val]


def _relu(x):
    return np.maximum(x, 0.0)


def _softmax(z):
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def _accuracy(logits, y) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == y))


def _ste_mask(w, scale: Po2Scale, cfg: QuantConfig) -> np.ndarray:
    r = round_half_away(np.asarray(w) / scale.value)
    return ((r >= cfg.q_min) & (r <= cfg.q_max)).astype(np.float64)


def _bias_scale(b, cfg: QuantConfig) -> Po2Scale:
    peak = float(np.max(np.abs(b)))
    if peak == 0.0:
        return Po2Scale(0)
    return po2_project(peak / cfg.q_max)


class _WeightQuantizer:
    """Per-tensor weight quantizer state shared by both families."""

    def __init__(self, name, qcfg: QatQuantizerConfig, w0, wcfg: QuantConfig):
        self.name = name
        self.qcfg = qcfg
        self.wcfg = wcfg
        self.state = init_grad_scale(w0, wcfg, rounding_mode=qcfg.mode)
        self.gva: Optional[GvaState] = gva_init(np.shape(w0)) if qcfg.use_gva else None
        self.adam = adam_init() if qcfg.family == "grad" else None
        self.mask: Optional[np.ndarray] = None
        self.last_scale: Po2Scale = Po2Scale(0)

    def fit_scale(self, w) -> Po2Scale:
        """The scale applied this step, refit (msqe) or snapped (grad)."""
        if self.state.frozen:
            self.state, used = freeze_step(self.state, self.last_scale)
            self.last_scale = used
            return used
        if self.qcfg.family == "grad":
            observed = effective_scale(self.state, w, self.gva, self.wcfg)
        else:
            f = None
            self.mask = None
            if self.qcfg.sigma_outlier is not None:
                self.mask = outlier_mask(w, self.qcfg.sigma_outlier)
                f = self.mask
            if self.gva is not None:
                f = gva_msqe_weights(self.gva, self.mask)
            if f is None:
                delta_init = float(np.max(np.abs(w))) / self.wcfg.q_max
                fitted = fit_scale_msqe(w, delta_init, self.qcfg.n_iters, self.wcfg)
            else:
                active = np.abs(np.asarray(w))[np.asarray(f) > 0]
                peak = float(np.max(active)) if active.size else float(np.max(np.abs(w)))
                if peak == 0.0:
                    peak = float(np.max(np.abs(w)))
                fitted = weighted_fit_scale(
                    w, peak / self.wcfg.q_max, self.qcfg.n_iters, f, self.wcfg
                )
            observed = line_search(
                w, fitted, self.qcfg.line_search_range, self.wcfg, weights=f
            )
        self.state, used = freeze_step(self.state, observed)
        self.last_scale = used
        return used

    def backward_update(self, w, upstream, scale: Po2Scale, lr: float) -> np.ndarray:
        """Masks the weight gradient, updates moment/scale state, returns grad_w."""
        grad_w, grad_scale = backward(
            w, self.state, upstream, self.wcfg, scale=scale, gva=self.gva
        )
        if self.gva is not None:
            self.gva = gva_update(self.gva, grad_w)
        if self.qcfg.family == "grad" and not self.state.frozen:
            new_dlog2, self.adam = adam_step(
                self.state.delta_log2, grad_scale, self.adam, lr
            )
            self.state = replace(self.state, delta_log2=new_dlog2)
        return grad_w


class _ActQuantizer:
    """Gradient-trained unsigned activation quantizer."""

    def __init__(self, qcfg: QatQuantizerConfig):
        self.qcfg = qcfg
        self.acfg = QuantConfig(bit_width=qcfg.act_bits, signed=False)
        self.state: Optional[GradScaleState] = None
        self.adam = adam_init()
        self.last_scale: Po2Scale = Po2Scale(0)

    def forward(self, a):
        if self.state is None:
            self.state = init_grad_scale(a, self.acfg, rounding_mode=self.qcfg.mode)
        scale = effective_scale(self.state, a, None, self.acfg)
        self.state, used = freeze_step(self.state, scale)
        self.last_scale = used
        return quantize(a, used, self.acfg), used

    def backward_update(self, a, upstream, scale: Po2Scale, lr: float) -> np.ndarray:
        grad_a, grad_scale = backward(a, self.state, upstream, self.acfg, scale=scale)
        if not self.state.frozen:
            new_dlog2, self.adam = adam_step(
                self.state.delta_log2, grad_scale, self.adam, lr
            )
            self.state = replace(self.state, delta_log2=new_dlog2)
        return grad_a


def _quantize_bias(b, cfg: QuantConfig):
    scale = _bias_scale(b, cfg)
    return quantize(b, scale, cfg), scale


def toy_qat_train(
    model_cfg: QatModelConfig,
    quantizer_cfg: QatQuantizerConfig,
    data_cfg: QatDataConfig,
):
    """Trains the toy model; returns (final metrics dict, series dict).

    Divergence (non-finite loss, or a quantizer fit blowing past the
    representable exponent range) terminates the run and is reported in
    final["divergence_step"] rather than raised.
    """
    Xtr, ytr, Xva, yva = make_cluster_dataset(data_cfg)
    rng = np.random.default_rng(model_cfg.seed)
    d, h, k = data_cfg.n_features, model_cfg.hidden, data_cfg.n_classes

    W1 = rng.standard_normal((h, d)) * math.sqrt(2.0 / d)
    gamma = np.ones(h)
    beta = np.zeros(h)
    W2 = rng.standard_normal((k, h)) * math.sqrt(2.0 / h)
    b2 = np.zeros(k)
    moving_mean = np.zeros(h)
    moving_var = np.ones(h)

    opt = {name: adam_init(p.shape) for name, p in
           (("W1", W1), ("gamma", gamma), ("beta", beta), ("W2", W2), ("b2", b2))}

    quant_on = quantizer_cfg.family != "none"
    wcfg = QuantConfig(quantizer_cfg.weight_bits, signed=True)
    bcfg = QuantConfig(quantizer_cfg.bias_bits, signed=True)
    scale_lr = quantizer_cfg.scale_lr if quantizer_cfg.scale_lr is not None else model_cfg.lr
    if quant_on:
        qw1 = _WeightQuantizer("w1", quantizer_cfg, W1, wcfg)
        qw2 = _WeightQuantizer("w2", quantizer_cfg, W2, wcfg)
        qact = _ActQuantizer(quantizer_cfg)

    freeze_at = None
    if model_cfg.freeze_fraction is not None:
        freeze_at = int(model_cfg.freeze_fraction * model_cfg.steps)

    series = {name: MetricSeries(name=name) for name in ("loss",)}

    def record(name, step, value):
        if name not in series:
            series[name] = MetricSeries(name=name)
        series[name].append(step, value)

    inject_idx = None
    prev_wq = {}
    divergence_step = None

    def eval_logits(X):
        bn = BnParams(gamma, beta, moving_mean, moving_var, _BN_EPS)
        W1f, b1f = fold_batchnorm(W1, np.zeros(h), bn)
        if quant_on:
            W1q = quantize(W1f, qw1.last_scale, wcfg)
            b1q, _ = _quantize_bias(b1f, bcfg)
            W2q = quantize(W2, qw2.last_scale, wcfg)
            b2q, _ = _quantize_bias(b2, bcfg)
        else:
            W1q, b1q, W2q, b2q = W1f, b1f, W2, b2
        a = _relu(X @ W1q.T + b1q)
        if quant_on and qact.state is not None:
            a = quantize(a, qact.last_scale, qact.acfg)
        return a @ W2q.T + b2q

    step = 0
    for step in range(model_cfg.steps):
        lr = cosine_decay(step, model_cfg.steps, model_cfg.lr, model_cfg.lr_alpha)
        s_lr = cosine_decay(step, model_cfg.steps, scale_lr, model_cfg.lr_alpha)
        idx = rng.integers(0, Xtr.shape[0], model_cfg.batch_size)
        X, y = Xtr[idx], ytr[idx]

        if quant_on and freeze_at is not None and step >= freeze_at:
            for q in (qw1, qw2):
                if not q.state.frozen:
                    q.state = freeze(q.state)
            if qact.state is not None and not qact.state.frozen:
                qact.state = freeze(qact.state)

        # Outlier injection: grow the largest |W2| entries toward the target factor.
        if model_cfg.inject_outliers_at is not None:
            s0 = model_cfg.inject_outliers_at
            if s0 <= step < s0 + model_cfg.inject_duration:
                if inject_idx is None:
                    n_top = max(1, math.ceil(model_cfg.inject_top_fraction * W2.size))
                    flat = np.argsort(np.abs(W2).ravel())[::-1][:n_top]
                    inject_idx = np.unravel_index(flat, W2.shape)
                W2[inject_idx] *= model_cfg.inject_factor ** (1.0 / model_cfg.inject_duration)

        try:
            u = X @ W1.T
            mu = u.mean(axis=0)
            var = u.var(axis=0)
            moving_mean = _MOVING_DECAY * moving_mean + (1 - _MOVING_DECAY) * mu
            moving_var = _MOVING_DECAY * moving_var + (1 - _MOVING_DECAY) * var
            bn = BnParams(gamma, beta, mu, var, _BN_EPS)
            W1f, b1f = fold_batchnorm(W1, np.zeros(h), bn)

            if quant_on:
                scale1 = qw1.fit_scale(W1f)
                W1q = quantize(W1f, scale1, wcfg)
                b1q, bscale1 = _quantize_bias(b1f, bcfg)
                scale2 = qw2.fit_scale(W2)
                W2q = quantize(W2, scale2, wcfg)
                b2q, bscale2 = _quantize_bias(b2, bcfg)
            else:
                W1q, b1q, W2q, b2q = W1f, b1f, W2, b2

            h1 = X @ W1q.T + b1q
            a = _relu(h1)
            if quant_on:
                aq, ascale = qact.forward(a)
            else:
                aq = a
            z = aq @ W2q.T + b2q
            p = _softmax(z)
            loss = float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-300)))
        except (ScaleRangeError, DegenerateCodesError):
            divergence_step = step
            break

        record("loss", step, loss)
        if not math.isfinite(loss):
            divergence_step = step
            break

        if quant_on:
            record("scale_exp/w1", step, scale1.exponent)
            record("scale_exp/w2", step, scale2.exponent)
            record("scale_exp/act1", step, ascale.exponent)
            record(
                "quant_error_variance", step,
                0.5 * (metric_quant_error_variance(W1f, W1q)
                       + metric_quant_error_variance(W2, W2q)),
            )
            if "w2" in prev_wq and prev_wq["w2"].shape == W2q.shape:
                record(
                    "fluctuation_variance", step,
                    0.5 * (metric_fluctuation_variance(W1q, prev_wq["w1"])
                           + metric_fluctuation_variance(W2q, prev_wq["w2"])),
                )
            prev_wq = {"w1": W1q, "w2": W2q}
            if qw2.gva is not None and qw2.gva.step_count >= 1 and qw2.mask is not None:
                m = qw2.mask
                if np.any(m == 0.0) and np.any(m == 1.0):
                    record(
                        "second_moment_ratio/w2", step,
                        metric_second_moment_ratio(qw2.gva.v, m),
                    )

        # Backward pass (batch statistics treated as constants in the fold).
        B = len(y)
        dz = p.copy()
        dz[np.arange(B), y] -= 1.0
        dz /= B
        db2q = dz.sum(axis=0)
        dW2q = dz.T @ aq
        daq = dz @ W2q
        if quant_on:
            dW2 = qw2.backward_update(W2, dW2q, scale2, s_lr)
            db2 = db2q * _ste_mask(b2, bscale2, bcfg)
            da = qact.backward_update(a, daq, ascale, s_lr)
        else:
            dW2, db2, da = dW2q, db2q, daq
        dh1 = da * (h1 > 0.0)
        db1q = dh1.sum(axis=0)
        dW1q = dh1.T @ X
        if quant_on:
            dW1f = qw1.backward_update(W1f, dW1q, scale1, s_lr)
            db1f = db1q * _ste_mask(b1f, bscale1, bcfg)
        else:
            dW1f, db1f = dW1q, db1q
        inv_sd = 1.0 / np.sqrt(var + _BN_EPS)
        s_fold = gamma * inv_sd
        dW1 = dW1f * s_fold[:, None]
        dgamma = (dW1f * W1).sum(axis=1) * inv_sd - db1f * mu * inv_sd
        dbeta = db1f

        for name, param, grad in (
            ("W1", W1, dW1), ("gamma", gamma, dgamma), ("beta", beta, dbeta),
            ("W2", W2, dW2), ("b2", b2, db2),
        ):
            try:
                new_p, opt[name] = adam_step(param, grad, opt[name], lr)
            except NonFiniteError:
                divergence_step = step
                break
            param[...] = new_p
        if divergence_step is not None:
            break

        if (step + 1) % model_cfg.eval_every == 0:
            record("val_acc", step, _accuracy(eval_logits(Xva), yva))

    final = {
        "train_accuracy": _accuracy(eval_logits(Xtr), ytr),
        "val_accuracy": _accuracy(eval_logits(Xva), yva),
        "divergence_step": divergence_step,
        "steps_run": step + 1 if divergence_step is None else divergence_step,
    }
    return final, series
