import numpy as np
import pytest

from clc.gradcheck import (
    composed_grad_check,
    nbest_grad_check,
    numeric_grad,
    pf_grad_check,
    rel_error,
)
from clc.losses import LossConfig

SEEDS = range(20)


class TestFiniteDifferenceTools:
    def test_numeric_grad_of_quadratic(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(numeric_grad(lambda: float(x @ x), x), 2 * x, atol=1e-9)
        # the input is restored after probing
        np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])

    def test_rel_error_scale(self):
        assert rel_error(np.array([1.0, 0.0]), np.array([1.0, 1e-9])) == pytest.approx(1e-9)
        assert rel_error(np.zeros(3), np.zeros(3)) == 0.0


class TestAnalyticGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_pf(self, seed):
        assert pf_grad_check(seed, (4, 3)).passed
        assert pf_grad_check(seed, (16, 8)).passed

    @pytest.mark.parametrize("seed", SEEDS)
    def test_nbest(self, seed):
        assert nbest_grad_check(seed, (6, 4, 5)).passed

    @pytest.mark.parametrize("seed", SEEDS)
    def test_nbest_near_tie(self, seed):
        report = nbest_grad_check(seed, (4, 4, 3), tie_gap=1e-3)
        assert report.passed, report.to_dict()

    @pytest.mark.parametrize("seed", SEEDS)
    def test_composed(self, seed):
        report = composed_grad_check(seed)
        assert report.passed, report.to_dict()

    @pytest.mark.parametrize("seed", range(5))
    def test_composed_train_mode(self, seed):
        assert composed_grad_check(seed, mode="train").passed

    def test_smooth_negative_variant(self):
        cfg = LossConfig(smooth_negative=True)
        assert all(nbest_grad_check(s, (5, 3, 4), cfg).passed for s in range(5))

    def test_zero_weight_config(self):
        cfg = LossConfig(alpha=0.0, beta=0.0, gamma=0.0, kappa=0.0)
        for report in (pf_grad_check(0, (4, 3), cfg), nbest_grad_check(0, (4, 3, 3), cfg)):
            assert report.worst == 0.0
