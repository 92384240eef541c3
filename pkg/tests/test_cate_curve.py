import math

import numpy as np
import pytest

from policy_targeting.cate_curve import (
    CurveEstimate,
    adaptive_bandwidths,
    curve_significance_summary,
    fit_cate,
    kernel_curve,
    kernel_estimate,
    window_offsets,
)
from policy_targeting.errors import InsufficientDataError, ShapeError
from policy_targeting.learners import LearnerSpec
from policy_targeting.nuisance_dr import (
    PseudoOutcomeMode,
    PseudoOutcomes,
    fit_crossfit,
    pseudo_outcomes,
)
from policy_targeting.risk_model import fit_risk_model, score_risk
from policy_targeting.synthetic_rct import SyntheticSpec, generate
from policy_targeting.tabular_data import split_dataset


def _po(diff):
    diff = np.asarray(diff, dtype=np.float64)
    return PseudoOutcomes(chi0=np.zeros_like(diff), chi1=diff, diff=diff, benefit=diff)


class TestKernelEstimate:
    def test_two_point_hand_value(self):
        tau_hat, _, _ = kernel_estimate(np.array([0.0, 1.0]), np.array([0.0, 2.0]), np.array([0.0]), 1.0)
        expected = 2 * math.exp(-0.5) / (1 + math.exp(-0.5))
        assert tau_hat[0] == pytest.approx(expected, abs=1e-6)
        assert tau_hat[0] == pytest.approx(0.7550, abs=1e-4)

    def test_symmetric_data(self):
        tau_hat, _, _ = kernel_estimate(np.array([-1.0, 0.0, 1.0]), np.array([1.0, 0.0, 1.0]),
                                        np.array([-1.0, 1.0]), 1.0)
        assert tau_hat[0] == pytest.approx(tau_hat[1], abs=1e-12)

    def test_duplicating_the_data_shrinks_the_band(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal(60)
        tau = b + rng.standard_normal(60)
        at = np.linspace(-1, 1, 9)
        est, lo, hi = kernel_estimate(b, tau, at, 0.5)
        est2, lo2, hi2 = kernel_estimate(np.tile(b, 2), np.tile(tau, 2), at, 0.5)
        np.testing.assert_allclose(est2, est, atol=1e-12)
        np.testing.assert_allclose((hi - lo) / (hi2 - lo2), math.sqrt(2), rtol=1e-9)

    def test_chunked_evaluation_matches_one_worker(self):
        rng = np.random.default_rng(1)
        b, tau = rng.standard_normal(100), rng.standard_normal(100)
        at = rng.standard_normal(1500)
        one = kernel_estimate(b, tau, at, 0.3)
        many = kernel_estimate(b, tau, at, 0.3, max_workers=4)
        for x, y in zip(one, many):
            np.testing.assert_array_equal(x, y)

    def test_mismatched_inputs(self):
        with pytest.raises(ShapeError):
            kernel_estimate(np.zeros(3), np.zeros(2), np.zeros(1), 1.0)


class TestKernelCurve:
    def test_constant_effect_gives_a_flat_curve_with_no_band(self):
        b = np.random.default_rng(2).standard_normal(300)
        curve = kernel_curve(b, np.full(300, 5.0), window=50)
        np.testing.assert_allclose(curve.tau_hat, 5.0, atol=1e-12)
        np.testing.assert_allclose(curve.ci_hi - curve.ci_lo, 0.0, atol=1e-12)

    def test_points_are_sorted_by_risk(self):
        b = np.array([3.0, 1.0, 2.0, 1.0])
        curve = kernel_curve(b, np.arange(4.0), window=2)
        np.testing.assert_array_equal(curve.b, [1.0, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(curve.order, [1, 3, 2, 0])

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        b, tau = rng.standard_normal(200), rng.standard_normal(200)
        a = kernel_curve(b, tau, window=40)
        shifted = kernel_curve(b + 7.0, tau, window=40)
        np.testing.assert_allclose(shifted.tau_hat, a.tau_hat, atol=1e-9)

    def test_estimates_stay_inside_the_data_range(self):
        rng = np.random.default_rng(4)
        b, tau = rng.standard_normal(250), rng.exponential(size=250)
        curve = kernel_curve(b, tau, window=30)
        assert curve.tau_hat.min() >= tau.min() - 1e-12
        assert curve.tau_hat.max() <= tau.max() + 1e-12

    def test_tied_risk_values_use_the_tied_mean(self):
        b = np.zeros(4)
        curve = kernel_curve(b, np.array([1.0, 3.0, 1.0, 3.0]), window=2)
        np.testing.assert_array_equal(curve.sigma, 0.0)
        np.testing.assert_allclose(curve.tau_hat, 2.0)

    def test_needs_two_rows(self):
        with pytest.raises(InsufficientDataError):
            kernel_curve(np.array([1.0]), np.array([1.0]))

    def test_frame_columns(self):
        curve = kernel_curve(np.arange(5.0), np.arange(5.0), window=2)
        assert list(curve.to_frame().columns) == ["b", "tau_hat", "sigma", "ci_lo", "ci_hi"]


class TestBandwidths:
    @pytest.mark.parametrize("window,expected", [(200, (100, 99)), (5, (3, 2)), (2, (1, 0))])
    def test_offsets(self, window, expected):
        assert window_offsets(window) == expected

    def test_indices_are_clamped(self):
        sigma = adaptive_bandwidths(np.arange(10.0), window=4)
        # forward 2, backward 1
        np.testing.assert_allclose(sigma, [1.0, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.0, 0.5])

    def test_window_too_small(self):
        with pytest.raises(InsufficientDataError):
            adaptive_bandwidths(np.arange(5.0), window=1)


class TestSummary:
    def _curve(self, tau_hat, half_width=0.0):
        tau_hat = np.asarray(tau_hat, dtype=np.float64)
        b = np.arange(tau_hat.size, dtype=np.float64)
        return CurveEstimate(b=b, tau_hat=tau_hat, sigma=np.ones_like(b),
                             ci_lo=tau_hat - half_width, ci_hi=tau_hat + half_width)

    def test_positive_constant(self):
        summary = curve_significance_summary(self._curve([2.0] * 5))
        assert summary.spearman_trend == 0.0
        assert summary.significant_fraction == 1.0
        assert summary.significant_negative_fraction == 0.0

    def test_negative_constant_with_wide_band(self):
        summary = curve_significance_summary(self._curve([-1.0] * 4, half_width=2.0))
        assert summary.significant_fraction == 0.0
        assert summary.significant_negative_fraction == 0.0

    def test_increasing_curve(self):
        summary = curve_significance_summary(self._curve([-2.0, -1.0, 0.5, 3.0], half_width=0.25))
        assert summary.spearman_trend == pytest.approx(1.0)
        assert summary.significant_fraction == 0.5
        assert summary.significant_negative_fraction == 0.5
        assert set(summary.to_dict()) == {"significant_fraction", "significant_negative_fraction",
                                          "spearman_trend"}


class TestFitCate:
    def test_constant_target(self, ridge):
        X = np.random.default_rng(5).standard_normal((50, 3))
        model = fit_cate(X, _po(np.full(50, -1.25)), ridge)
        np.testing.assert_allclose(model.predict(X), -1.25, atol=1e-9)
        assert model.provenance["target"] == "pseudo_outcome_difference"

    def test_row_order_does_not_matter(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((80, 3))
        diff = X[:, 0] + rng.standard_normal(80)
        forest = LearnerSpec(n_trees=25, seed=3)
        perm = rng.permutation(80)
        a = fit_cate(X, _po(diff), forest)
        b = fit_cate(X[perm], _po(diff[perm]), forest)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))

    def test_row_count_mismatch(self, ridge):
        with pytest.raises(ShapeError):
            fit_cate(np.zeros((4, 2)), _po(np.zeros(5)), ridge)

    def test_noiseless_effects_are_recovered(self, ols, logistic):
        ds, truth = generate(SyntheticSpec(n=800, noise_sd=0.0, seed=7))
        split = split_dataset(ds, 0.5, seed=7)
        nuis = fit_crossfit(split.train, ols, logistic, seed=7)
        po = pseudo_outcomes(split.train, nuis, PseudoOutcomeMode.WITHIN_FOLD)
        model = fit_cate(split.train.X, po, ols, provenance={"split_seed": 7})
        np.testing.assert_allclose(model.predict(split.eval.X), truth.tau[split.eval.row_index],
                                   atol=1e-4)
        assert model.provenance["split_seed"] == 7


@pytest.mark.slow
def test_aligned_risk_and_effect_give_an_increasing_curve(ridge, logistic):
    trends = []
    for seed in range(20):
        ds, _ = generate(SyntheticSpec(n=6000, risk_te_alignment=1.0, seed=seed))
        split = split_dataset(ds, 0.5, seed=seed)
        nuis = fit_crossfit(split.train, ridge, logistic, seed=seed)
        po = pseudo_outcomes(split.eval, nuis, PseudoOutcomeMode.ENSEMBLE_MEAN)
        risk = score_risk(split.eval, fit_risk_model(split.train, ridge))
        curve = kernel_curve(risk.b, po.benefit)
        trends.append(curve_significance_summary(curve).spearman_trend)
    assert np.median(trends) > 0.9
