"""Shared fixtures and hypothesis settings for the test suite."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "po2quant",
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("po2quant")

# 3x3 reference tensor with a fully worked-out fit: at step size 1.0 the
# codes, the least-squares ratio 91.31/83.0, and the squared errors of the
# neighboring power-of-two step sizes are all known exactly.
REF_W = np.array(
    [
        [-0.17, 2.58, -8.75],
        [-3.56, 1.56, -0.15],
        [2.15, -0.66, 0.49],
    ]
)

REF_CODES = np.array(
    [
        [0, 3, -7],
        [-4, 2, 0],
        [2, -1, 0],
    ]
)

REF_RATIO = 91.31 / 83.0

# Exact squared errors of REF_W quantized at exponents -2..2 (4-bit signed).
REF_MSQE = {
    -2: 53.153200000000005,
    -1: 27.6757,
    0: 4.0557,
    1: 2.0357,
    2: 9.3557,
}


@pytest.fixture
def ref_w():
    return REF_W.copy()
