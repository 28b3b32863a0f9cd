import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelmon.cusum import (
    LOWER,
    UPPER,
    AlertEvent,
    CalibratedChart,
    ChartState,
    GapPolicy,
    cusum_step,
    montgomery_estimate,
    run_chart,
)
from panelmon.patterns import ResidualSeries

from oracles import cusum_reference


def series(values, mask=None):
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.isfinite(values)
    return ResidualSeries(values, mask, "p0")


def chart(k=0.75, h=4.0, policy=None):
    return CalibratedChart(k, h, -h, policy or GapPolicy.reset_always())


class TestCusumStep:
    def test_positive_run(self):
        s = ChartState()
        out = []
        for x in [1.0, 1.0, 1.0]:
            s = cusum_step(s, x, 0.5)
            out.append((s.c_plus, s.c_minus))
        assert out == [(0.5, 0.0), (1.0, 0.0), (1.5, 0.0)]

    def test_zero_residuals_stay_zero(self):
        s = ChartState()
        for _ in range(5):
            s = cusum_step(s, 0.0, 0.75)
        assert s.c_plus == 0.0 and s.c_minus == 0.0

    def test_negative_run(self):
        s = ChartState()
        vals = []
        for x in [-2.0, -2.0]:
            s = cusum_step(s, x, 0.75)
            vals.append(s.c_minus)
        assert vals == [-1.25, -2.5]

    def test_nonzero_counters(self):
        s = ChartState()
        for x in [2.0, 2.0, -5.0, 2.0]:
            s = cusum_step(s, x, 0.5)
        # c_plus hit zero at the -5 step, then restarted
        assert s.n_plus == 1 and s.n_minus == 2

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=40),
           st.floats(0.1, 2.0))
    @settings(max_examples=60, deadline=None)
    def test_signs_always_valid(self, xs, k):
        s = ChartState()
        for x in xs:
            s = cusum_step(s, x, k)
            assert s.c_plus >= 0.0 and s.c_minus <= 0.0

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_matches_reference_recursion(self, seed):
        rng = np.random.default_rng(seed)
        xs = rng.normal(size=20) * 2
        k = float(rng.uniform(0.1, 1.5))
        ref_p, ref_m = cusum_reference(xs, k)
        s = ChartState()
        for x, rp, rm in zip(xs, ref_p, ref_m):
            s = cusum_step(s, float(x), k)
            assert s.c_plus == rp and s.c_minus == rm

    def test_monotonicity_in_residuals(self):
        rng = np.random.default_rng(1)
        xs = rng.normal(size=30)
        bigger = xs + rng.uniform(0, 0.5, size=30)
        s1, s2 = ChartState(), ChartState()
        for a, b in zip(xs, bigger):
            s1 = cusum_step(s1, float(a), 0.5)
            s2 = cusum_step(s2, float(b), 0.5)
            assert s2.c_plus >= s1.c_plus


class TestRunChart:
    def test_zero_residuals_no_alerts(self):
        run = run_chart(series(np.zeros(50)), chart())
        assert run.alerts == ()
        assert not run.c_plus.any() and not run.c_minus.any()

    def test_hand_recursion_alert(self):
        run = run_chart(series([3.0, 3.0, 3.0]), chart(k=0.75, h=4.0))
        assert len(run.alerts) == 1
        a = run.alerts[0]
        assert a.time == 1 and a.side == UPPER and a.statistic == 4.5
        assert a.n_nonzero == 2

    def test_gap_reset(self):
        run = run_chart(series([3.0, np.nan, 3.0, 3.0]),
                        chart(k=0.75, h=4.0))
        assert [a.time for a in run.alerts] == [3]
        np.testing.assert_allclose(run.c_plus, [2.25, 0.0, 2.25, 0.0])

    def test_gap_propagation_short_gap(self):
        c = chart(k=0.75, h=4.0, policy=GapPolicy.propagate_up_to(2))
        run = run_chart(series([3.0, np.nan, 3.0]), c)
        # state frozen across the 1-gap: alert on the second observation
        assert [a.time for a in run.alerts] == [2]

    def test_gap_propagation_long_gap_resets(self):
        c = chart(k=0.75, h=4.0, policy=GapPolicy.propagate_up_to(2))
        vals = [3.0, np.nan, np.nan, np.nan, 3.0, 3.0]
        run = run_chart(series(vals), c)
        assert [a.time for a in run.alerts] == [5]

    def test_gap_policy_equivalence_without_gaps(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(size=300) + 0.3
        r1 = run_chart(series(xs), chart(policy=GapPolicy.reset_always()))
        r2 = run_chart(series(xs), chart(policy=GapPolicy.propagate_up_to(5)))
        assert r1.alerts == r2.alerts

    def test_restart_does_not_change_first_alert(self):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=400) + 0.5
        with_restart = run_chart(series(xs), chart(), restart_on_alert=True)
        without = run_chart(series(xs), chart(), restart_on_alert=False)
        assert with_restart.alerts[0] == without.alerts[0]

    def test_no_restart_emits_on_each_entry(self):
        # dip at t=2 leaves the upper violation without entering the lower
        xs = [5.0, 5.0, -4.5, 5.0, 5.0]
        run = run_chart(series(xs), chart(k=0.75, h=4.0),
                        restart_on_alert=False)
        assert [(a.time, a.side) for a in run.alerts] == [(0, UPPER), (3, UPPER)]


class TestMontgomery:
    def test_upper_formula(self):
        a = AlertEvent(10, UPPER, 8.5, 4)
        assert montgomery_estimate(a, 0.75) == pytest.approx(2.875)

    def test_lower_formula_constant_shift(self):
        a = AlertEvent(10, LOWER, -11.0, 4)
        assert montgomery_estimate(a, 0.75) == pytest.approx(-3.5)

    def test_constant_shift_identity_upper(self):
        run = run_chart(series(np.full(20, 2.0)), chart(k=0.75, h=4.0))
        assert montgomery_estimate(run.alerts[0], 0.75) == pytest.approx(2.0)

    def test_constant_shift_identity_lower(self):
        run = run_chart(series(np.full(20, -2.0)), chart(k=0.75, h=4.0))
        a = run.alerts[0]
        assert a.side == LOWER
        assert montgomery_estimate(a, 0.75) == pytest.approx(-2.0)

    def test_printed_lower_form_fails_identity(self):
        # the often-printed variant -k - C/N gives +0.5 for a -2 shift
        run = run_chart(series(np.full(20, -2.0)), chart(k=0.75, h=4.0))
        a = run.alerts[0]
        printed = -0.75 - a.statistic / a.n_nonzero
        assert printed == pytest.approx(0.5)

    def test_undefined_without_nonzero_steps(self):
        with pytest.raises(ValueError):
            montgomery_estimate(AlertEvent(0, UPPER, 5.0, 0), 0.5)

    @given(st.floats(1.0, 5.0), st.floats(0.1, 0.9))
    @settings(max_examples=30, deadline=None)
    def test_constant_shift_exact(self, delta, k):
        if delta <= k + 0.05:
            return
        run = run_chart(series(np.full(60, delta)), chart(k=k, h=6.0))
        a = run.alerts[0]
        n = a.time + 1
        assert a.n_nonzero == n
        assert a.statistic == pytest.approx(n * (delta - k))
        assert montgomery_estimate(a, k) == pytest.approx(delta)
