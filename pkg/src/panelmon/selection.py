"""Pool selection: score process stability and split the panel into
moderately stable (chart calibration) and very stable (pattern estimation)
pools.

Scores are mean-squared-error style criteria against the panel's robust
reference; a 1-D two-group clustering (k-means or a Gaussian mixture fitted
by EM) separates in-control from out-of-control processes, applied twice to
obtain the nested pools.  An adaptive per-time filter can additionally strip
extreme observations from the pool before pattern estimation.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClusteringWarning, PipelineError
from .panel import DetrendedPanel
from .rng import STREAM_CLUSTER, substream

DEFAULT_MIN_OBS = 30
DEFAULT_IQR_MULTIPLE = 1.0
_KMEANS_RESTARTS = 50
_GMM_MAX_ITER = 200
_GMM_TOL = 1e-8


class ClusterMethod(enum.Enum):
    KMEANS = "kmeans"
    GMM = "gmm"


@dataclass(frozen=True)
class StabilityScore:
    process_id: str
    mse: float


@dataclass(frozen=True)
class Pools:
    """Nested pools: p2 (very stable) inside p1 (moderately stable)."""

    p1: tuple
    p2: tuple
    scores: tuple
    method: ClusterMethod
    ineligible: tuple = ()

    def __post_init__(self):
        if not set(self.p2) <= set(self.p1):
            raise PipelineError("p2 must be a subset of p1")


def iqr(values):
    """Interquartile range with hinge-style (midpoint) quartiles, matching
    quartiles computed by hand on small samples."""
    q1, q3 = np.percentile(values, [25, 75], method="midpoint")
    return q3 - q1


def stability_score(detrended: DetrendedPanel, robust: bool = True,
                    min_obs: int = DEFAULT_MIN_OBS):
    """One stability score per process with enough observed points.

    Robust form: squared temporal median plus temporal IQR of the detrended
    series (the series are centred near zero by construction).  Non-robust
    form: mean squared deviation from the panel's per-time median.

    Returns (scores, ineligible_ids).
    """
    eta, mask = detrended.eta_hat, detrended.mask
    counts = mask.sum(axis=1)
    eligible = counts >= max(1, min_obs)
    if not eligible.any():
        raise PipelineError(
            f"no process has >= {min_obs} observed detrended points"
        )
    scores = []
    if not robust:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            reference = np.nanmedian(eta, axis=0)
    for i in np.flatnonzero(eligible):
        x = eta[i, mask[i]]
        if robust:
            med = np.median(x)
            s = med * med + iqr(x)
        else:
            dev = eta[i] - reference
            dev = dev[mask[i] & np.isfinite(reference)]
            s = float(np.mean(dev**2))
        scores.append(StabilityScore(detrended.process_ids[i], float(s)))
    ineligible = tuple(
        detrended.process_ids[i] for i in np.flatnonzero(~eligible)
    )
    return scores, ineligible


def _lloyd_1d(x, c0, c1):
    """Two-center Lloyd iterations on 1-D data; returns (wcss, threshold)."""
    for _ in range(100):
        thr = 0.5 * (c0 + c1)
        low = x <= thr
        if low.all() or not low.any():
            break
        n0, n1 = c0, c1
        c0, c1 = x[low].mean(), x[~low].mean()
        if c0 == n0 and c1 == n1:
            break
    thr = 0.5 * (c0 + c1)
    low = x <= thr
    if low.all() or not low.any():
        return math.inf, thr
    wcss = ((x[low] - x[low].mean()) ** 2).sum() + ((x[~low] - x[~low].mean()) ** 2).sum()
    return wcss, thr


def _kmeans_two(x, seed):
    lo, hi = x.min(), x.max()
    best = _lloyd_1d(x, lo, hi)
    span = hi - lo
    for r in range(1, _KMEANS_RESTARTS):
        rng = substream(seed, STREAM_CLUSTER, r)
        j = lo + span * np.sort(rng.random(2))
        cand = _lloyd_1d(x, j[0], j[1])
        if cand[0] < best[0]:
            best = cand
    return x <= best[1]


def _gmm_two(x, seed):
    n = len(x)
    mu = np.array([x.min(), x.max()])
    var_floor = max(x.var(), 1e-12) * 1e-6 + 1e-300
    var = np.array([x.var(), x.var()]) + var_floor
    w = np.array([0.5, 0.5])
    last_ll = -math.inf
    for _ in range(_GMM_MAX_ITER):
        # E step: log responsibilities of the two components
        log_pdf = (
            -0.5 * (x[:, None] - mu[None, :]) ** 2 / var[None, :]
            - 0.5 * np.log(2 * math.pi * var[None, :])
            + np.log(w[None, :])
        )
        mx = log_pdf.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(log_pdf - mx).sum(axis=1))
        ll = lse.sum()
        resp = np.exp(log_pdf - lse[:, None])
        # M step
        nk = resp.sum(axis=0) + 1e-300
        w = nk / n
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        var = np.maximum(var, var_floor)
        if abs(ll - last_ll) <= _GMM_TOL * max(1.0, abs(ll)):
            break
        last_ll = ll
    log_pdf = (
        -0.5 * (x[:, None] - mu[None, :]) ** 2 / var[None, :]
        - 0.5 * np.log(2 * math.pi * var[None, :])
        + np.log(w[None, :])
    )
    hard = log_pdf.argmax(axis=1)
    # in-control = lower-mean component; equal means -> lower variance
    if mu[0] < mu[1] or (mu[0] == mu[1] and var[0] <= var[1]):
        low = hard == 0
    else:
        low = hard == 1
    return low


def cluster_two(scores, method: ClusterMethod = ClusterMethod.KMEANS,
                seed: int = 0):
    """Split 1-D score values into an IC (low) and an OC (high) group.

    Returns a boolean array, True for the IC group.  Identical scores (or a
    clustering that collapses into one group) degrade gracefully: everything
    is labelled IC and a warning is emitted.
    """
    x = np.asarray(scores, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise PipelineError("cluster_two expects a non-empty 1-D score array")
    if np.unique(x).size < 2:
        warnings.warn(
            "all stability scores identical; clustering is degenerate and "
            "every process is treated as in-control",
            DegenerateClusteringWarning,
        )
        return np.ones(len(x), dtype=bool)
    if method is ClusterMethod.KMEANS:
        low = _kmeans_two(x, seed)
    elif method is ClusterMethod.GMM:
        low = _gmm_two(x, seed)
    else:
        raise PipelineError(f"unknown clustering method {method!r}")
    if low.all() or not low.any():
        warnings.warn(
            "clustering collapsed into a single group; every process is "
            "treated as in-control",
            DegenerateClusteringWarning,
        )
        return np.ones(len(x), dtype=bool)
    return low


def select_pools(detrended: DetrendedPanel,
                 method: ClusterMethod = ClusterMethod.KMEANS,
                 robust: bool = True, seed: int = 0,
                 min_obs: int = DEFAULT_MIN_OBS) -> Pools:
    """Build the nested pools: cluster all scores for p1, re-cluster the
    p1 members' scores for p2."""
    if detrended.n_processes < 4:
        raise PipelineError("pool selection needs at least 4 processes")
    scores, ineligible = stability_score(detrended, robust, min_obs)
    values = np.array([s.mse for s in scores])
    ids = [s.process_id for s in scores]
    in_p1 = cluster_two(values, method, seed)
    p1 = tuple(pid for pid, keep in zip(ids, in_p1) if keep)
    if len(p1) == 1:
        warnings.warn(
            "p1 contains a single process; p2 falls back to p1",
            DegenerateClusteringWarning,
        )
        p2 = p1
    else:
        sub = values[in_p1]
        in_p2 = cluster_two(sub, method, seed + 1)
        p2 = tuple(pid for pid, keep in zip(p1, in_p2) if keep)
    return Pools(p1=p1, p2=p2, scores=tuple(scores), method=method,
                 ineligible=ineligible)


def adaptive_shewhart_filter(detrended: DetrendedPanel, pool,
                             iqr_multiple: float = DEFAULT_IQR_MULTIPLE):
    """Mask pool observations outside median +- iqr_multiple * IQR at each
    time.

    The cross-sectional median and IQR are computed over the observed pool
    values; times with fewer than 4 observed pool values are left untouched
    (the IQR is too unstable there).  Returns (filtered_panel,
    fraction_removed); the input panel is not modified.
    """
    pool = list(pool)
    if not pool:
        raise PipelineError("adaptive filter needs a non-empty pool")
    rows = np.array([detrended.index_of(pid) for pid in pool])
    eta = detrended.eta_hat[rows]
    mask = detrended.mask[rows].copy()
    n_before = int(mask.sum())
    counts = mask.sum(axis=0)
    removed = 0
    if math.isfinite(iqr_multiple):
        for t in np.flatnonzero(counts >= 4):
            x = eta[mask[:, t], t]
            med = np.median(x)
            band = iqr_multiple * iqr(x)
            outside = np.abs(eta[:, t] - med) > band
            outside &= mask[:, t]
            removed += int(outside.sum())
            mask[outside, t] = False
    new_mask = detrended.mask.copy()
    new_mask[rows] = mask
    eta_hat = np.where(new_mask, detrended.eta_hat, np.nan)
    filtered = DetrendedPanel(
        eta_hat=eta_hat,
        mask=new_mask,
        common_signal=detrended.common_signal,
        levels=detrended.levels,
        process_ids=detrended.process_ids,
        time_step=detrended.time_step,
        start_time=detrended.start_time,
    )
    fraction = removed / n_before if n_before else 0.0
    return filtered, fraction
