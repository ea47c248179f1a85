"""Tests for the scikit-learn estimator wrappers."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from po2quant import Po2Scale, QuantConfig, quant_codes, quantize
from po2quant.estimators import GradPo2Quantizer, MsqePo2Quantizer
from conftest import REF_MSQE


class TestMsqeEstimator:
    def test_defaults_on_the_reference_tensor(self, ref_w):
        est = MsqePo2Quantizer().fit(ref_w)
        assert est.exponent_ == 1
        assert est.scale_ == Po2Scale(1)
        assert est.msqe_ == REF_MSQE[1]

    def test_disabling_the_line_search_keeps_the_alternating_fit(self, ref_w):
        assert MsqePo2Quantizer(line_search_range=0).fit(ref_w).exponent_ == 0

    def test_transform_matches_the_functional_quantizer(self, ref_w):
        est = MsqePo2Quantizer().fit(ref_w)
        np.testing.assert_array_equal(
            est.transform(ref_w), quantize(ref_w, est.scale_, est.cfg_)
        )

    def test_fit_transform(self, ref_w):
        out = MsqePo2Quantizer().fit_transform(ref_w)
        lattice = out / 2.0
        np.testing.assert_array_equal(lattice, np.trunc(lattice))

    def test_transform_codes_are_in_range(self, ref_w):
        est = MsqePo2Quantizer(bit_width=3).fit(ref_w)
        codes = quant_codes(ref_w, est.scale_, est.cfg_)
        assert codes.min() >= est.cfg_.q_min and codes.max() <= est.cfg_.q_max

    def test_outlier_masking_shields_the_scale(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal(256)
        w[0] = 100.0
        assert MsqePo2Quantizer().fit(w).exponent_ == 4
        assert MsqePo2Quantizer(sigma_outlier=2.0).fit(w).exponent_ == -1

    def test_explicit_delta_init_is_respected(self, ref_w):
        est = MsqePo2Quantizer(delta_init=1.0, line_search_range=0, n_iters=2).fit(ref_w)
        assert est.exponent_ == 0

    def test_unfitted_transform_raises(self, ref_w):
        with pytest.raises(NotFittedError):
            MsqePo2Quantizer().transform(ref_w)

    def test_accepts_1d_and_3d_inputs(self):
        rng = np.random.default_rng(5)
        for shape in [(40,), (4, 5, 3)]:
            w = rng.standard_normal(shape)
            est = MsqePo2Quantizer().fit(w)
            assert est.transform(w).shape == shape

    def test_rejects_nan_inputs(self):
        with pytest.raises(ValueError):
            MsqePo2Quantizer().fit(np.array([1.0, np.nan]))

    def test_get_set_params_round_trip(self):
        est = MsqePo2Quantizer(bit_width=6, sigma_outlier=1.5)
        params = est.get_params()
        assert params["bit_width"] == 6
        assert params["sigma_outlier"] == 1.5
        est.set_params(n_iters=7)
        assert est.n_iters == 7

    def test_clone_keeps_hyperparameters_and_drops_state(self, ref_w):
        est = MsqePo2Quantizer(bit_width=5).fit(ref_w)
        fresh = clone(est)
        assert fresh.bit_width == 5
        with pytest.raises(NotFittedError):
            fresh.transform(ref_w)


class TestGradEstimator:
    def test_converges_on_the_reference_tensor(self, ref_w):
        est = GradPo2Quantizer(steps=100).fit(ref_w)
        assert est.exponent_ == 1
        assert len(est.exponent_history_) == 100

    def test_all_rounding_modes_agree_here(self, ref_w):
        for mode in ("ceil", "round", "rtlm"):
            assert GradPo2Quantizer(steps=100, mode=mode).fit(ref_w).exponent_ == 1

    def test_lattice_input_is_a_fixed_point(self):
        w = np.array([-3.0, -1.0, 0.0, 2.0, 7.0])
        est = GradPo2Quantizer(steps=50, init_delta_log2=0.0).fit(w)
        assert est.exponent_ == 0
        assert set(est.exponent_history_) == {0}
        np.testing.assert_array_equal(est.transform(w), w)

    def test_transform_matches_the_functional_quantizer(self, ref_w):
        est = GradPo2Quantizer(steps=60).fit(ref_w)
        np.testing.assert_array_equal(
            est.transform(ref_w), quantize(ref_w, est.scale_, est.cfg_)
        )

    def test_unfitted_transform_raises(self, ref_w):
        with pytest.raises(NotFittedError):
            GradPo2Quantizer().transform(ref_w)

    def test_deterministic(self, ref_w):
        a = GradPo2Quantizer(steps=80).fit(ref_w)
        b = GradPo2Quantizer(steps=80).fit(ref_w)
        assert a.delta_log2_ == b.delta_log2_
        assert a.exponent_history_ == b.exponent_history_

    def test_clone_round_trip(self):
        est = GradPo2Quantizer(mode="rtlm", steps=33)
        fresh = clone(est)
        assert fresh.mode == "rtlm"
        assert fresh.steps == 33
