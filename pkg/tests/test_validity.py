"""Tests for the interval transform and the composite validity test."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bondedsim.errors import InsufficientDataError, UnsupportedHashRateError
from bondedsim.stats import RngStream
from bondedsim.validity import (
    MIN_COMMIT_FRACTION,
    VALIDITY_POLICY,
    ReportedInterval,
    ValidityParams,
    ks_test,
    params_for,
    transform,
    valid,
)


def honest_intervals(n, rng, rate=0.5, difficulty=600.0):
    """Truthfully reported intervals: times exponential at difficulty/rate."""
    t = rng.generator.exponential(difficulty / rate, size=n)
    return [ReportedInterval(float(ti), rate, difficulty) for ti in t]


def grid_intervals(n):
    """Intervals whose transform lands exactly on the equioccupancy grid."""
    xs = -np.log1p(-(np.arange(1, n + 1) - 0.5) / n)
    return [ReportedInterval(float(x), 1.0, 1.0) for x in xs]


class TestTransform:
    @pytest.mark.parametrize("h", [1.0, 7.5, 1e12])
    def test_units_cancel(self, h):
        iv = ReportedInterval(1200.0, h / 2, 600.0 * h)
        assert transform([iv])[0] == pytest.approx(1.0, rel=1e-12)

    def test_zero_rate_gives_zero(self):
        assert transform([ReportedInterval(500.0, 0.0, 600.0)])[0] == 0.0

    def test_order_preserved(self):
        ivs = [ReportedInterval(t, 1.0, 1.0) for t in (3.0, 1.0, 2.0)]
        assert transform(ivs).tolist() == [3.0, 1.0, 2.0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            transform([])

    @pytest.mark.parametrize(
        "iv",
        [
            ReportedInterval(0.0, 1.0, 1.0),
            ReportedInterval(-1.0, 1.0, 1.0),
            ReportedInterval(1.0, -1.0, 1.0),
            ReportedInterval(1.0, 1.0, 0.0),
            ReportedInterval(1.0, 1.0, -3.0),
        ],
    )
    def test_invalid_fields_rejected(self, iv):
        with pytest.raises(ValueError):
            transform([iv])

    def test_honest_reports_pass_at_one_percent_level(self):
        # truthful reporting leaves unit-exponential samples, so windows
        # clear a 0.01 threshold essentially always
        from bondedsim.stats import ks_pvalue, ks_statistic

        rng = RngStream(321, 0)
        passes = 0
        trials = 1000
        for _ in range(trials):
            x = transform(honest_intervals(100, rng))
            out = ks_statistic(x)
            passes += ks_pvalue(out.delta, out.n) > 0.01
        assert passes / trials >= 0.98


class TestKsTest:
    def test_perfect_grid_passes(self):
        ivs = grid_intervals(100)
        for tau in (0.5, 0.05, 1e-7):
            assert ks_test(ivs, 100, tau) == 1

    def test_collapsed_intervals_fail(self):
        ivs = [ReportedInterval(1e-12, 1.0, 1.0) for _ in range(100)]
        assert ks_test(ivs, 100, 1e-7) == 0

    def test_uses_most_recent_window(self):
        # garbage history followed by a clean window must pass
        ivs = [ReportedInterval(1e-12, 1.0, 1.0) for _ in range(50)] + grid_intervals(100)
        assert ks_test(ivs, 100, 1e-7) == 1

    def test_insufficient_data_is_an_error(self):
        with pytest.raises(InsufficientDataError):
            ks_test(grid_intervals(10), 11, 0.05)

    def test_honest_windows_never_fail_at_tiny_tau(self):
        rng = RngStream(99, 0)
        failures = sum(
            ks_test(honest_intervals(100, rng), 100, 1e-7) == 0 for _ in range(1000)
        )
        assert failures == 0


class TestValid:
    def test_equals_product_of_subtests(self):
        params = ValidityParams(5, 50, 0.2, 0.2)
        rng = RngStream(17, 0)
        for _ in range(50):
            ivs = honest_intervals(50, rng)
            expected = ks_test(ivs, 5, 0.2) * ks_test(ivs, 50, 0.2)
            assert valid(ivs, params) == expected

    def test_short_window_failure_fails_composite(self):
        # clean long history with a stretched tail: only the short test trips
        params = ValidityParams(5, 50, 1e-4, 1e-4)
        ivs = grid_intervals(50)[:-5] + [
            ReportedInterval(50.0, 1.0, 1.0) for _ in range(5)
        ]
        assert ks_test(ivs, 5, params.tau_s) == 0
        assert valid(ivs, params) == 0

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            valid(grid_intervals(10), ValidityParams(2, 20, 0.05, 0.05))

    @given(st.floats(min_value=1e-6, max_value=1e6))
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_common_rescaling(self, factor):
        params = ValidityParams(3, 30, 0.05, 0.05)
        rng = RngStream(23, 0)
        ivs = honest_intervals(30, rng)
        scaled = [
            ReportedInterval(
                iv.inter_arrival_s,
                iv.reported_rate_hps * factor,
                iv.avg_difficulty_hashes * factor,
            )
            for iv in ivs
        ]
        assert valid(ivs, params) == valid(scaled, params)


class TestParamsPolicy:
    @pytest.mark.parametrize(
        "fraction,expected",
        [
            (0.01, (2, 100, 1e-7, 1e-7)),
            (0.10, (20, 1000, 1e-10, 1e-10)),
            (0.25, (50, 2500, 1e-12, 1e-12)),
            (0.50, (100, 5000, 1e-12, 1e-12)),
        ],
    )
    def test_policy_rows(self, fraction, expected):
        p = params_for(fraction)
        assert (p.n_s, p.n_l, p.tau_s, p.tau_l) == expected

    def test_intermediate_fraction_rounds_down(self):
        p = params_for(0.30)
        assert (p.n_s, p.n_l) == (50, 2500)

    def test_above_top_row_uses_top_row(self):
        assert params_for(0.9) == params_for(0.50)

    def test_between_minimum_and_first_row(self):
        assert params_for(0.007) == params_for(0.01)

    def test_below_minimum_rejected(self):
        with pytest.raises(UnsupportedHashRateError):
            params_for(0.004)
        assert MIN_COMMIT_FRACTION == 0.005

    def test_window_durations_consistent_across_tiers(self):
        # every tier spans ~1.5 days short and ~70 days long of expected mining
        T = 600.0
        for fraction, p in VALIDITY_POLICY:
            short_days = p.n_s * T / fraction / 86400.0
            long_days = p.n_l * T / fraction / 86400.0
            assert 1.0 <= short_days <= 2.0
            assert 60.0 <= long_days <= 80.0

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ValidityParams(5, 5, 0.1, 0.1)
        with pytest.raises(ValueError):
            ValidityParams(0, 5, 0.1, 0.1)
        with pytest.raises(ValueError):
            ValidityParams(2, 5, 0.0, 0.1)
        with pytest.raises(ValueError):
            ValidityParams(2, 5, 0.1, 1.0)
