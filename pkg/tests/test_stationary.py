import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.tsa.stattools import adfuller

from fedts.errors import InsufficientDataError, InvalidArgumentError
from fedts.stationary import (
    ColumnPlan, StationaryConfig, StationaryPlan, adf_test, apply_plan, critical_value,
    deseasonalize, detect_period, detrend, fit_plan, identity_plan, schwert_lags,
)
from fedts.timeseries import TabularDataset


class TestAdf:
    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("kind", ["noise", "walk", "ar"])
    def test_statistic_matches_statsmodels(self, seed, kind):
        rng = np.random.default_rng(seed)
        e = rng.normal(size=300)
        x = {"noise": e, "walk": np.cumsum(e), "ar": np.convolve(e, 0.8 ** np.arange(30))[:300]}[kind]
        ours = adf_test(x)
        stat, _, lags, nobs, _ = adfuller(x, maxlag=schwert_lags(300), regression="c", autolag=None)
        assert ours.statistic == pytest.approx(stat, abs=1e-8)
        assert ours.lags_used == lags and ours.n_obs == nobs

    def test_explicit_max_lag(self, rng):
        x = rng.normal(size=200)
        ours = adf_test(x, max_lag=2)
        stat = adfuller(x, maxlag=2, regression="c", autolag=None)[0]
        assert ours.lags_used == 2
        assert ours.statistic == pytest.approx(stat, abs=1e-8)

    def test_constant_series_is_degenerate(self):
        r = adf_test(np.full(100, 4.2))
        assert r.degenerate and r.is_stationary and r.statistic == -math.inf

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            adf_test(np.arange(15.0))

    def test_critical_values(self):
        assert critical_value(0.05) == -2.86
        assert critical_value(0.01) == -3.43
        with pytest.raises(InvalidArgumentError):
            critical_value(0.2)

    def test_custom_critical_table(self, rng):
        x = rng.normal(size=200)
        r = adf_test(x, alpha=0.2, critical_values={0.2: -100.0})
        assert r.critical_value == -100.0 and not r.is_stationary

    def test_calibration(self):
        rng = np.random.default_rng(7)
        noise = sum(adf_test(rng.normal(size=500)).is_stationary for _ in range(200))
        walks = sum(adf_test(np.cumsum(rng.normal(size=500))).is_stationary for _ in range(200))
        assert noise >= 180 and walks <= 20


class TestDetrend:
    def test_ramp(self):
        out = detrend(np.arange(20.0), 5)
        np.testing.assert_allclose(out[4:], 2.0, atol=1e-12)
        # the expanding prefix averages what is available
        np.testing.assert_allclose(out[:4], [0.0, 0.5, 1.0, 1.5])

    def test_constant(self):
        np.testing.assert_array_equal(detrend(np.full(10, 3.0), 4), 0.0)

    def test_window_one(self, rng):
        np.testing.assert_array_equal(detrend(rng.normal(size=10), 1), 0.0)

    def test_window_too_long(self):
        with pytest.raises(InvalidArgumentError):
            detrend(np.arange(3.0), 4)


class TestDeseasonalize:
    def test_exact_period(self):
        x = np.sin(2 * np.pi * np.arange(100) / 7)
        assert np.all(np.abs(deseasonalize(x, 7)[7:]) < 1e-12)

    def test_ramp(self):
        out = deseasonalize(np.arange(10.0), 3)
        np.testing.assert_array_equal(out[3:], 3.0)
        np.testing.assert_array_equal(out[:3], 0.0)

    def test_period_length_minus_one(self):
        x = np.array([1.0, 5.0, 2.0, 9.0])
        np.testing.assert_array_equal(deseasonalize(x, 3), [0, 0, 0, 8.0])

    def test_period_too_long(self):
        with pytest.raises(InvalidArgumentError):
            deseasonalize(np.arange(4.0), 4)


class TestDetectPeriod:
    def test_sine(self):
        assert detect_period(np.sin(2 * np.pi * np.arange(500) / 24)) == 24

    def test_white_noise(self):
        rng = np.random.default_rng(3)
        found = sum(detect_period(rng.normal(size=500)) is None for _ in range(100))
        assert found >= 95

    def test_two_sines(self):
        t = np.arange(500)
        x = np.sin(2 * np.pi * t / 12) + 3 * np.sin(2 * np.pi * t / 48)
        assert detect_period(x) == 48

    def test_brute_force_scan_agrees(self):
        # the AC scan over [2, 100] peaks (first local maximum above 0.3) at 24
        t = np.arange(500)
        x = np.sin(2 * np.pi * t / 24)
        d = x - x.mean()
        ac = [sum(d[: 500 - k] * d[k:]) / sum(d * d) for k in range(101)]
        first_peak = next(
            k for k in range(2, 100) if ac[k] > ac[k - 1] and ac[k] >= ac[k + 1] and ac[k] > 0.3
        )
        assert detect_period(x) == first_peak == 24

    def test_bad_range(self):
        with pytest.raises(InvalidArgumentError):
            detect_period(np.arange(50.0), min_lag=10, max_lag=60)


def _segmented(columns_per_run):
    """TabularDataset with one segment per run; every row labelled normal."""
    values = np.concatenate(columns_per_run)
    seg = np.concatenate([np.full(len(c), i) for i, c in enumerate(columns_per_run)])
    keys = tuple((0, i + 1) for i in range(len(columns_per_run)))
    return TabularDataset(values, np.zeros(len(values), dtype=int), (), seg, keys)


class TestPlan:
    def test_white_noise_gives_identity(self, rng):
        data = _segmented([rng.normal(size=(300, 3)) for _ in range(3)])
        plan = fit_plan(data)
        assert all(c.is_identity for c in plan.columns)
        out = apply_plan(data, plan)
        assert out.values.tobytes() == data.values.tobytes()

    def test_random_walk_column_is_detrended(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            runs = []
            for _ in range(3):
                cols = rng.normal(size=(300, 2))
                cols[:, 1] = np.cumsum(cols[:, 1])
                runs.append(cols)
            plan = fit_plan(_segmented(runs))
            hits += plan.columns[1].detrend and not plan.columns[0].detrend
        assert hits >= 18

    def test_walk_plus_season(self):
        rng = np.random.default_rng(11)
        t = np.arange(480)
        runs = [
            np.column_stack([np.cumsum(rng.normal(size=480)) + 5 * np.sin(2 * np.pi * t / 24 + rng.uniform(0, 6))])
            for _ in range(4)
        ]
        col = fit_plan(_segmented(runs)).columns[0]
        assert col.detrend and col.deseasonalize and col.period == 24

    def test_detrend_only_plan_composes(self, rng):
        data = _segmented([rng.normal(size=(50, 2)) for _ in range(2)])
        plan = StationaryPlan(data.feature_names, (ColumnPlan(detrend=True, ma_window=5), ColumnPlan()))
        out = apply_plan(data, plan)
        for _, sl in data.segment_slices():
            np.testing.assert_array_equal(out.values[sl, 0], detrend(data.values[sl, 0], 5))
            np.testing.assert_array_equal(out.values[sl, 1], data.values[sl, 1])

    def test_fit_on_normal_apply_to_anomaly(self, rng):
        t = np.arange(240)
        normal = [np.column_stack([np.cumsum(rng.normal(size=240)) + 4 * np.sin(2 * np.pi * t / 12)]) for _ in range(3)]
        plan = fit_plan(_segmented(normal))
        col = plan.columns[0]
        anomaly = rng.normal(size=(240, 1)) * 3 + np.sin(2 * np.pi * t / 7)[:, None]
        data = TabularDataset(anomaly, np.ones(240, dtype=int), ())
        out = apply_plan(data, plan)
        expected = anomaly[:, 0]
        if col.detrend:
            expected = detrend(expected, col.ma_window)
        if col.deseasonalize:
            expected = deseasonalize(expected, col.period)
        np.testing.assert_array_equal(out.values[:, 0], expected)

    def test_only_normal_rows_are_used(self, rng):
        normal = rng.normal(size=(300, 1))
        walk = np.cumsum(rng.normal(size=(300, 1)), axis=0)
        data = TabularDataset(np.concatenate([normal, walk]), np.r_[np.zeros(300), np.ones(300)], ())
        assert fit_plan(data, normal_class=0).columns[0].is_identity
        assert fit_plan(data, normal_class=1).columns[0].detrend

    def test_no_normal_rows(self, rng):
        data = TabularDataset(rng.normal(size=(50, 1)), np.ones(50), ())
        with pytest.raises(InsufficientDataError):
            fit_plan(data)

    def test_json_round_trip(self, tmp_path):
        plan = StationaryPlan(
            ("a", "b"),
            (ColumnPlan(True, 7, True, 24, -1.5), ColumnPlan(adf_statistic=-5.0)),
            0,
            {"alpha": 0.05},
        )
        plan.save(tmp_path / "p.json")
        assert StationaryPlan.load(tmp_path / "p.json") == plan

    def test_column_mismatch(self, rng):
        data = TabularDataset(rng.normal(size=(30, 2)), np.zeros(30), ())
        with pytest.raises(InvalidArgumentError):
            apply_plan(data, identity_plan(("a",)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 5), st.integers(0, 10_000))
def test_periodic_signal_cancels(period, cycles, seed):
    base = np.random.default_rng(seed).normal(size=period)
    x = np.tile(base, cycles + 1)
    assert np.all(np.abs(deseasonalize(x, period)[period:]) < 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.floats(-5, 5), st.floats(-100, 100))
def test_detrend_removes_linear_trend_exactly(w, slope, offset):
    x = offset + slope * np.arange(60.0)
    out = detrend(x, w)
    # trailing mean of a line lags it by slope * (w - 1) / 2
    np.testing.assert_allclose(out[w - 1 :], slope * (w - 1) / 2, atol=1e-9 * (1 + abs(offset) + abs(slope) * 60))
