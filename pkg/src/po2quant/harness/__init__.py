"""Desk-scale experiments and stability metrics for the quantizers."""

from .metrics import (
    MetricSeries,
    metric_dynamic_range_ratio,
    metric_fluctuation_variance,
    metric_quant_error_variance,
    metric_scale_fluctuation,
    metric_scale_transitions,
    metric_second_moment_ratio,
)
from .toy import (
    DEFAULT_NOISE_SWEEP,
    ToyQuantizerExperimentConfig,
    recompute_ema_exponent,
    toy_convergence_experiment,
    toy_rtlm_experiment,
    unconstrained_msqe_optimum,
)
from .qat import (
    QatDataConfig,
    QatModelConfig,
    QatQuantizerConfig,
    make_cluster_dataset,
    toy_qat_train,
)

__all__ = [
    "MetricSeries",
    "metric_dynamic_range_ratio",
    "metric_fluctuation_variance",
    "metric_quant_error_variance",
    "metric_scale_fluctuation",
    "metric_scale_transitions",
    "metric_second_moment_ratio",
    "DEFAULT_NOISE_SWEEP",
    "ToyQuantizerExperimentConfig",
    "recompute_ema_exponent",
    "toy_convergence_experiment",
    "toy_rtlm_experiment",
    "unconstrained_msqe_optimum",
    "QatDataConfig",
    "QatModelConfig",
    "QatQuantizerConfig",
    "make_cluster_dataset",
    "toy_qat_train",
]
