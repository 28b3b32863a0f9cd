import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelmon import Alignment, DetrendedPanel
from panelmon.errors import ConfigError, StandardizationWarning
from panelmon.patterns import (
    estimate_ic_pattern_boxcar,
    estimate_ic_pattern_knn,
    standardize,
)


def make_detrended(eta, mask=None):
    eta = np.asarray(eta, dtype=float)
    if mask is None:
        mask = np.isfinite(eta)
    return DetrendedPanel(eta, mask, np.full(eta.shape[1], np.nan),
                          np.zeros_like(eta))


class TestBoxcar:
    def test_constant_pool(self):
        d = make_detrended(np.full((3, 10), 2.5))
        p = estimate_ic_pattern_boxcar(d, d.process_ids, 5)
        np.testing.assert_allclose(p.mu0, 2.5)
        np.testing.assert_allclose(p.sigma0, 0.0, atol=1e-12)

    def test_two_series_population_variance(self):
        d = make_detrended(np.vstack([np.zeros(3), np.full(3, 2.0)]))
        p = estimate_ic_pattern_boxcar(d, d.process_ids, 1)
        np.testing.assert_allclose(p.mu0, 1.0)
        np.testing.assert_allclose(p.sigma0, 1.0)

    def test_single_series_window_moments(self):
        d = make_detrended(np.vstack([[0.0, 6.0, 0.0], np.full(3, np.nan)]),
                           mask=np.vstack([np.ones(3, bool), np.zeros(3, bool)]))
        p = estimate_ic_pattern_boxcar(d, ("p0",), 3)
        assert p.mu0[1] == pytest.approx(2.0)
        assert p.sigma0[1] ** 2 == pytest.approx(8.0)

    def test_empty_support_is_missing(self):
        eta = np.vstack([[1.0, np.nan, np.nan], [2.0, np.nan, np.nan]])
        d = make_detrended(eta)
        p = estimate_ic_pattern_boxcar(d, d.process_ids, 1)
        assert p.defined[0] and not p.defined[1] and not p.defined[2]

    def test_support_standardizes_to_zero_one(self):
        # the window members standardized by (mu0, sigma0) pool to exactly
        # mean 0, variance 1
        rng = np.random.default_rng(0)
        eta = rng.normal(size=(4, 30))
        d = make_detrended(eta)
        delta = 5
        p = estimate_ic_pattern_boxcar(d, d.process_ids, delta)
        pooled = []
        for t in range(30):
            lo, hi = max(0, t - 2), min(29, t + 2)
            z = (eta[:, lo:hi + 1] - p.mu0[t]) / p.sigma0[t]
            pooled.append(z.ravel())
        pooled = np.concatenate(pooled)
        assert pooled.mean() == pytest.approx(0.0, abs=1e-6)
        assert pooled.var() == pytest.approx(1.0, abs=1e-6)


class TestKnn:
    def test_full_pool_contemporaneous(self):
        rng = np.random.default_rng(1)
        eta = rng.normal(size=(4, 12))
        d = make_detrended(eta)
        knn = estimate_ic_pattern_knn(d, d.process_ids, 4)
        box = estimate_ic_pattern_boxcar(d, d.process_ids, 1)
        np.testing.assert_allclose(knn.mu0, box.mu0)
        np.testing.assert_allclose(knn.sigma0, box.sigma0)

    def test_single_series_with_gap(self):
        eta = np.vstack([[1.0, np.nan, 3.0], np.full(3, np.nan)])
        mask = np.isfinite(eta)
        d = make_detrended(eta, mask)
        p = estimate_ic_pattern_knn(d, ("p0",), 2)
        assert p.mu0[1] == pytest.approx(2.0)

    def test_k_equals_all_points_constant_pattern(self):
        rng = np.random.default_rng(2)
        eta = rng.normal(size=(3, 8))
        d = make_detrended(eta)
        p = estimate_ic_pattern_knn(d, d.process_ids, 24)
        np.testing.assert_allclose(p.mu0, eta.mean())

    def test_matches_boxcar_on_full_panel(self):
        rng = np.random.default_rng(3)
        eta = rng.normal(size=(3, 21))
        d = make_detrended(eta)
        delta = 5
        knn = estimate_ic_pattern_knn(d, d.process_ids, 3 * delta)
        box = estimate_ic_pattern_boxcar(d, d.process_ids, delta)
        interior = slice(delta, 21 - delta)
        np.testing.assert_allclose(knn.mu0[interior], box.mu0[interior])
        np.testing.assert_allclose(knn.sigma0[interior], box.sigma0[interior])

    def test_left_sided_never_uses_future(self):
        # sentinel: poison every value after t0 and check the pattern at t0
        rng = np.random.default_rng(4)
        eta = rng.normal(size=(3, 20))
        t0 = 9
        poisoned = eta.copy()
        poisoned[:, t0 + 1:] = 1e6
        p_clean = estimate_ic_pattern_knn(
            make_detrended(eta), ("p0", "p1", "p2"), 12, Alignment.LEFT_SIDED)
        p_poison = estimate_ic_pattern_knn(
            make_detrended(poisoned), ("p0", "p1", "p2"), 12, Alignment.LEFT_SIDED)
        np.testing.assert_array_equal(p_clean.mu0[: t0 + 1], p_poison.mu0[: t0 + 1])
        np.testing.assert_array_equal(p_clean.sigma0[: t0 + 1],
                                      p_poison.sigma0[: t0 + 1])

    def test_too_few_points_rejected(self):
        d = make_detrended(np.zeros((2, 3)))
        with pytest.raises(ConfigError):
            estimate_ic_pattern_knn(d, d.process_ids, 7)

    def test_tie_break_prefers_earlier_time(self):
        # k=3 at t=1 with one series: distances {0:1, 1:0, 2:1}; both
        # neighbours tie, but k=2 support at t=1 must prefer t=0
        eta = np.vstack([[10.0, 0.0, 99.0], np.full(3, np.nan)])
        mask = np.isfinite(eta)
        d = make_detrended(eta, mask)
        p = estimate_ic_pattern_knn(d, ("p0",), 2)
        assert p.mu0[1] == pytest.approx(5.0)  # {10, 0}, not {0, 99}


class TestStandardize:
    def test_formula(self):
        eta = np.vstack([np.full(5, 2.0), np.full(5, 1.0)])
        d = make_detrended(eta)
        from panelmon.patterns import ICPattern
        pat = ICPattern(np.full(5, 1.0), np.full(5, 0.5), Alignment.CENTERED)
        res = standardize(d, pat)
        np.testing.assert_allclose(res[0].values, 2.0)
        np.testing.assert_allclose(res[1].values, 0.0)

    def test_zero_sigma_goes_missing_with_warning(self):
        eta = np.vstack([np.full(4, 2.0), np.full(4, 1.0)])
        d = make_detrended(eta)
        from panelmon.patterns import ICPattern
        sig = np.array([1.0, 0.0, 1.0, 1.0])
        pat = ICPattern(np.zeros(4), sig, Alignment.CENTERED)
        with pytest.warns(StandardizationWarning):
            res = standardize(d, pat)
        assert not res[0].mask[1] and res[0].mask[0]

    @given(st.floats(0.1, 10), st.floats(-5, 5))
    @settings(max_examples=25, deadline=None)
    def test_affine_equivariance(self, a, b):
        rng = np.random.default_rng(0)
        eta = rng.normal(size=(3, 40))
        d1 = make_detrended(eta)
        d2 = make_detrended(a * eta + b)
        p1 = estimate_ic_pattern_boxcar(d1, d1.process_ids, 5)
        p2 = estimate_ic_pattern_boxcar(d2, d2.process_ids, 5)
        r1 = standardize(d1, p1)
        r2 = standardize(d2, p2)
        np.testing.assert_allclose(r1[0].values, r2[0].values, atol=1e-9)

    def test_applies_to_processes_outside_pool(self):
        rng = np.random.default_rng(5)
        eta = rng.normal(size=(4, 30))
        d = make_detrended(eta)
        pat = estimate_ic_pattern_boxcar(d, ("p0", "p1"), 5)
        res = standardize(d, pat)
        assert len(res) == 4 and res[3].mask.all()
