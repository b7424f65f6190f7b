import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specimpute import data as dt
from specimpute import evaluate as ev

from oracles import crps_pairwise, gaussian_crps_at_zero


def ones(*shape):
    return np.ones(shape, dtype=np.float32)


class TestMae:
    def test_perfect(self):
        x = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
        assert ev.mae(x, x, ones(1, 2, 3)) == 0.0

    def test_constant_offset(self):
        x = np.zeros((2, 2, 2), dtype=np.float32)
        assert ev.mae(x + 1, x, ones(2, 2, 2)) == 1.0

    def test_mixed(self):
        pred = np.array([[[1.0], [5.0]]])
        truth = np.array([[[0.0], [0.0]]])
        assert ev.mae(pred, truth, ones(1, 2, 1)) == 3.0

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            ev.mae(ones(1, 1, 1), ones(1, 1, 1), np.zeros((1, 1, 1)))


class TestRmse:
    def test_constant_offset(self):
        x = np.zeros((1, 4, 1))
        assert abs(ev.rmse(x - 2.5, x, ones(1, 4, 1)) - 2.5) < 1e-12

    def test_outlier_dominates(self):
        pred = np.array([[[0.0], [0.0], [3.0]]])
        truth = np.zeros((1, 3, 1))
        assert abs(ev.rmse(pred, truth, ones(1, 3, 1)) - np.sqrt(3.0)) < 1e-12

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_rmse_at_least_mae(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.normal(size=(1, 5, 2))
        truth = rng.normal(size=(1, 5, 2))
        m = ones(1, 5, 2)
        assert ev.rmse(pred, truth, m) >= ev.mae(pred, truth, m) - 1e-12


class TestMape:
    def test_ten_percent(self):
        value, skipped = ev.mape(np.array([[[110.0]]]), np.array([[[100.0]]]),
                                 ones(1, 1, 1))
        assert abs(value - 10.0) < 1e-12
        assert skipped == 0

    def test_perfect(self):
        x = np.full((1, 3, 1), 7.0)
        value, _ = ev.mape(x, x, ones(1, 3, 1))
        assert value == 0.0

    def test_zero_truth_skipped(self):
        pred = np.array([[[1.0], [2.0]]])
        truth = np.array([[[0.0], [4.0]]])
        value, skipped = ev.mape(pred, truth, ones(1, 2, 1))
        assert skipped == 1
        assert abs(value - 50.0) < 1e-12

    def test_all_skipped(self):
        with pytest.raises(ValueError):
            ev.mape(ones(1, 2, 1), np.zeros((1, 2, 1)), ones(1, 2, 1))


class TestCrps:
    def test_point_mass_equals_mae(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(2, 4, 3)).astype(np.float32)
        truth = rng.normal(size=(2, 4, 3)).astype(np.float32)
        m = ones(2, 4, 3)
        assert abs(ev.crps_samples(pred[None], truth, m) - ev.mae(pred, truth, m)) < 1e-12

    def test_two_sample_example(self):
        samples = np.array([0.0, 1.0]).reshape(2, 1, 1, 1)
        got = ev.crps_samples(samples, np.zeros((1, 1, 1)), ones(1, 1, 1))
        assert abs(got - 0.25) < 1e-12
        assert abs(got - crps_pairwise([0.0, 1.0], 0.0)) < 1e-12

    def test_matches_bruteforce_enumeration(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(size=(7, 1, 1, 1))
        y = np.array(0.3).reshape(1, 1, 1)
        got = ev.crps_samples(samples, y, ones(1, 1, 1))
        want = crps_pairwise(samples.reshape(-1), 0.3)
        assert abs(got - want) < 1e-12

    def test_standard_normal_closed_form(self):
        rng = np.random.default_rng(2)
        samples = rng.standard_normal((10_000, 1, 1, 1))
        got = ev.crps_samples(samples, np.zeros((1, 1, 1)), ones(1, 1, 1))
        assert abs(got - gaussian_crps_at_zero()) < 0.01

    def test_identical_samples_equal_mae_exactly(self):
        pred = np.array([[[1.5], [-2.0]]])
        truth = np.array([[[1.0], [0.0]]])
        m = ones(1, 2, 1)
        stack = np.repeat(pred[None], 5, axis=0)
        assert ev.crps_samples(stack, truth, m) == ev.mae(pred, truth, m)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        samples = rng.normal(size=(6, 1, 8, 1))
        truth = rng.normal(size=(1, 8, 1))
        m = ones(1, 8, 1)
        base = ev.crps_samples(samples, truth, m)
        perm = rng.permutation(8)
        assert abs(ev.crps_samples(samples[:, :, perm], truth[:, perm], m[:, perm])
                   - base) < 1e-12


class TestReferenceImputers:
    def make(self):
        values = np.array([[[1.0], [0.0], [3.0], [0.0], [2.0]]], dtype=np.float32)
        mask = np.array([[[1.0], [0.0], [1.0], [0.0], [1.0]]], dtype=np.float32)
        return dt.TimeSeriesBatch(values, mask, np.arange(5, dtype=np.float64))

    def test_mean_fill(self):
        out = ev.reference_impute(self.make(), "mean")
        assert abs(out[0, 1, 0] - 2.0) < 1e-6
        assert out[0, 0, 0] == 1.0

    def test_median_robust_to_outlier(self):
        values = np.array([[[1.0], [2.0], [100.0], [0.0]]], dtype=np.float32)
        mask = np.array([[[1.0], [1.0], [1.0], [0.0]]], dtype=np.float32)
        batch = dt.TimeSeriesBatch(values, mask, np.arange(4, dtype=np.float64))
        out = ev.reference_impute(batch, "median")
        assert out[0, 3, 0] == 2.0

    def test_linear_interp(self):
        values = np.array([[[0.0], [0.0], [2.0]]], dtype=np.float32)
        mask = np.array([[[1.0], [0.0], [1.0]]], dtype=np.float32)
        batch = dt.TimeSeriesBatch(values, mask, np.arange(3, dtype=np.float64))
        out = ev.reference_impute(batch, "linear-interp")
        assert abs(out[0, 1, 0] - 1.0) < 1e-6

    def test_fully_missing_feature(self):
        values = np.zeros((1, 3, 1), dtype=np.float32)
        mask = np.zeros((1, 3, 1), dtype=np.float32)
        batch = dt.TimeSeriesBatch(values, mask, np.arange(3, dtype=np.float64))
        with pytest.raises(ValueError):
            ev.reference_impute(batch, "mean")


class TestReport:
    def test_report_roundtrip_and_table(self):
        rng = np.random.default_rng(4)
        pred = rng.normal(size=(1, 6, 2)).astype(np.float32)
        truth = rng.normal(size=(1, 6, 2)).astype(np.float32)
        mask = (rng.random((1, 6, 2)) > 0.4).astype(np.float32)
        rep = ev.compute_report(pred, truth, mask, feature_names=["a", "b"])
        parsed = json.loads(rep.to_json())
        assert parsed["n_eval"] == int(mask.sum())
        assert set(parsed["per_feature"]) == {"a", "b"}
        table = rep.to_table()
        assert "ALL" in table and "a" in table

    def test_all_metrics_nonnegative(self):
        rng = np.random.default_rng(5)
        pred = rng.normal(size=(2, 5, 3)).astype(np.float32)
        truth = rng.normal(size=(2, 5, 3)).astype(np.float32)
        mask = ones(2, 5, 3)
        samples = rng.normal(size=(4, 2, 5, 3)).astype(np.float32)
        rep = ev.compute_report(pred, truth, mask, samples=samples)
        for v in (rep.mae, rep.rmse, rep.mape, rep.crps):
            assert v >= 0
