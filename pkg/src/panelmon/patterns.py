"""Time-varying in-control mean/variance patterns and standardization.

The very stable pool provides, at each time, a support set of observed
points: either every pool observation inside a fixed window (boxcar) or the
K temporally nearest pool observations (K-NN, which rides out stretches of
missing data).  The pattern mean and variance are the plain moments of that
support set; the variance is centred on the pattern mean at the target time
and normalized by the support count.

Calibration may use centered windows; real-time monitoring must use
left-sided ones so that no future observation leaks into the estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StandardizationWarning
from .panel import Alignment, DetrendedPanel, _window_bounds

DEFAULT_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class ICPattern:
    """Per-time in-control mean and standard deviation."""

    mu0: np.ndarray
    sigma0: np.ndarray
    alignment: Alignment
    window_delta: int | None = None
    knn_k: int | None = None

    @property
    def defined(self):
        return np.isfinite(self.mu0) & np.isfinite(self.sigma0)


@dataclass(frozen=True)
class ResidualSeries:
    """One process's standardized residuals with gaps preserved."""

    values: np.ndarray
    mask: np.ndarray
    process_id: str
    time_step: float = 1.0
    start_time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        m = np.asarray(self.mask, dtype=bool)
        v[~m] = np.nan
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def n_times(self):
        return len(self.values)

    @property
    def times(self):
        return self.start_time + np.arange(self.n_times) * self.time_step


class _PoolPoints:
    """Observed pool points sorted by (time, process index).

    Prefix sums over this ordering give O(1) sums of any per-time group
    prefix, which is exactly what the boundary tie-breaks need: at equal
    temporal distance, earlier time wins, then lower process index.
    """

    def __init__(self, detrended: DetrendedPanel, pool):
        rows = np.array([detrended.index_of(pid) for pid in pool])
        sub_mask = detrended.mask[rows]
        sub_vals = detrended.eta_hat[rows]
        t_len = detrended.n_times
        proc_idx, time_idx = np.nonzero(sub_mask)
        order = np.lexsort((proc_idx, time_idx))
        vals = sub_vals[proc_idx[order], time_idx[order]]
        self.t_len = t_len
        self.counts = np.bincount(time_idx, minlength=t_len)
        self.cum_n = np.concatenate([[0], np.cumsum(self.counts)])
        self.psum = np.concatenate([[0.0], np.cumsum(vals)])
        self.psq = np.concatenate([[0.0], np.cumsum(vals * vals)])
        self.total = len(vals)

    def group_prefix(self, t, take):
        """Sum and sum-of-squares of the first `take` points at time t."""
        a = self.cum_n[t]
        b = a + take
        return self.psum[b] - self.psum[a], self.psq[b] - self.psq[a]

    def range_sum(self, t0, t1):
        """Sums over all points with time in [t0, t1] (clipped)."""
        t0 = max(t0, 0)
        t1 = min(t1, self.t_len - 1)
        if t1 < t0:
            return 0.0, 0.0, 0
        a, b = self.cum_n[t0], self.cum_n[t1 + 1]
        return self.psum[b] - self.psum[a], self.psq[b] - self.psq[a], b - a


def _finish(s1, s2, n):
    mu = s1 / n
    var = s2 / n - mu * mu
    return mu, max(var, 0.0)


def estimate_ic_pattern_boxcar(detrended: DetrendedPanel, p2, delta: int,
                               alignment: Alignment = Alignment.CENTERED) -> ICPattern:
    """Pattern from all pool observations inside a window of `delta` samples.

    Even widths take the extra sample from the past; left-sided windows use
    past and current samples only.
    """
    if delta < 1:
        raise ConfigError("boxcar window must be >= 1")
    if not len(tuple(p2)):
        raise ConfigError("pattern estimation needs a non-empty pool")
    pts = _PoolPoints(detrended, p2)
    left, right = _window_bounds(delta, alignment)
    mu0 = np.full(pts.t_len, np.nan)
    sig0 = np.full(pts.t_len, np.nan)
    for t in range(pts.t_len):
        s1, s2, n = pts.range_sum(t - left, t + right)
        if n:
            mu, var = _finish(s1, s2, n)
            mu0[t], sig0[t] = mu, np.sqrt(var)
    return ICPattern(mu0, sig0, alignment, window_delta=delta)


def estimate_ic_pattern_knn(detrended: DetrendedPanel, p2, k: int,
                            alignment: Alignment = Alignment.CENTERED) -> ICPattern:
    """Pattern from the K pool observations temporally nearest to each time.

    Distance ties are broken toward the earlier time, then the lower
    process index.  Left-sided mode restricts candidates to past and
    current times; early times fall back to every available candidate.
    """
    if k < 2:
        raise ConfigError("knn pattern needs k >= 2")
    pts = _PoolPoints(detrended, p2)
    if pts.total < k:
        raise ConfigError(
            f"knn pattern needs at least k={k} observed pool points, "
            f"found {pts.total}"
        )
    mu0 = np.full(pts.t_len, np.nan)
    sig0 = np.full(pts.t_len, np.nan)
    if alignment is Alignment.LEFT_SIDED:
        for t in range(pts.t_len):
            avail = pts.cum_n[t + 1]
            if avail == 0:
                continue
            if avail <= k:
                s1, s2, n = pts.range_sum(0, t)
            else:
                # boundary group: smallest time in support, take its
                # lowest-index processes
                b = int(np.searchsorted(pts.cum_n, avail - k, side="right")) - 1
                s1, s2, n = pts.range_sum(b + 1, t)
                g1, g2 = pts.group_prefix(b, k - n)
                s1, s2, n = s1 + g1, s2 + g2, k
            mu, var = _finish(s1, s2, n)
            mu0[t], sig0[t] = mu, np.sqrt(var)
    elif alignment is Alignment.CENTERED:
        for t in range(pts.t_len):
            # smallest radius whose closed window holds at least k points
            lo_r, hi_r = 0, pts.t_len
            while lo_r < hi_r:
                mid = (lo_r + hi_r) // 2
                if pts.range_sum(t - mid, t + mid)[2] >= k:
                    hi_r = mid
                else:
                    lo_r = mid + 1
            r = lo_r
            if r == 0:
                # the support is a prefix (lowest process indices) of the
                # contemporaneous group
                take = min(k, pts.counts[t])
                s1, s2 = pts.group_prefix(t, take)
                n = take
            else:
                s1, s2, n = pts.range_sum(t - r + 1, t + r - 1)
                need = k - n
                # at distance r the earlier time has priority
                tb = t - r
                if tb >= 0 and need:
                    take = min(need, pts.counts[tb])
                    g1, g2 = pts.group_prefix(tb, take)
                    s1, s2, n, need = s1 + g1, s2 + g2, n + take, need - take
                ta = t + r
                if ta < pts.t_len and need:
                    take = min(need, pts.counts[ta])
                    g1, g2 = pts.group_prefix(ta, take)
                    s1, s2, n, need = s1 + g1, s2 + g2, n + take, need - take
            if n:
                mu, var = _finish(s1, s2, n)
                mu0[t], sig0[t] = mu, np.sqrt(var)
    else:
        raise ConfigError(f"unknown alignment {alignment!r}")
    return ICPattern(mu0, sig0, alignment, knn_k=k)


def standardize(detrended: DetrendedPanel, pattern: ICPattern,
                sigma_floor: float = DEFAULT_SIGMA_FLOOR):
    """Standardize every process by the in-control pattern.

    Residuals are missing wherever the input is missing, the pattern is
    undefined, or the scale estimate sits at or below `sigma_floor` (those
    last drops are counted and reported once as a warning).
    """
    defined = pattern.defined
    usable = defined & (pattern.sigma0 > sigma_floor)
    n_floor = int((detrended.mask & (defined & ~usable)[None, :]).sum())
    if n_floor:
        warnings.warn(
            f"{n_floor} observations dropped: in-control scale at or below "
            f"the {sigma_floor} floor",
            StandardizationWarning,
        )
    out = []
    with np.errstate(invalid="ignore", divide="ignore"):
        resid = (detrended.eta_hat - pattern.mu0[None, :]) / pattern.sigma0[None, :]
    mask = detrended.mask & usable[None, :]
    resid = np.where(mask, resid, np.nan)
    for i, pid in enumerate(detrended.process_ids):
        out.append(ResidualSeries(resid[i], mask[i], pid,
                                  detrended.time_step, detrended.start_time))
    return out
