"""Offline chart design by bootstrap.

Residual segments from the calibration pool feed a resampling scheme:
either i.i.d. draws of single observations or concatenated overlapping
blocks of consecutive values (the moving block bootstrap), which preserves
serial correlation inside blocks.  Blocks never span gaps or process
boundaries.

On top of the scheme sit the design algorithms: Monte-Carlo run-length
estimation, control-limit search by bisection (the run lengths are computed
once per replication set and shared across bisection iterations, so the
estimated ARL is exactly monotone in the limit), shift-size estimation from
out-of-control data, and allowance optimization over a grid.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cusum import CalibratedChart, ChartProvenance, GapPolicy
from .errors import CensoringWarning, ConfigError, ConvergenceError, PipelineError
from .rng import STREAM_RESAMPLE, substream
from .shifts import ShiftForm, ShiftSpec

DEFAULT_B = 2000
DEFAULT_BOUNDS = (0.5, 50.0)
DEFAULT_MAX_ITER = 40
DEFAULT_MAX_WIDENINGS = 8
DEFAULT_H_RESOLUTION = 1e-3
CENSOR_WARN_FRACTION = 0.05


class ResamplingMode(enum.Enum):
    SINGLE_OBSERVATION = "single_observation"
    MOVING_BLOCK = "moving_block"


@dataclass(frozen=True)
class ResamplingScheme:
    """Bootstrap source built from gap-free residual segments.

    `segments` are within-process runs of consecutive observed residuals.
    Moving-block draws start uniformly over every valid start position in
    segments at least one block long; single-observation draws come from the
    pooled values of all segments.
    """

    mode: ResamplingMode
    segments: tuple
    seed: int = 0
    block_length: int = 1

    def __post_init__(self):
        segs = tuple(
            np.ascontiguousarray(np.asarray(s, dtype=float).ravel())
            for s in self.segments
            if len(np.atleast_1d(s))
        )
        if not segs or not sum(len(s) for s in segs):
            raise ConfigError("resampling scheme needs a non-empty source")
        object.__setattr__(self, "segments", segs)
        flat = np.concatenate(segs)
        object.__setattr__(self, "_flat", flat)
        if self.mode is ResamplingMode.MOVING_BLOCK:
            if self.block_length < 1:
                raise ConfigError("block length must be >= 1")
            starts = []
            offset = 0
            for s in segs:
                n_here = len(s) - self.block_length + 1
                if n_here > 0:
                    starts.append(offset + np.arange(n_here))
                offset += len(s)
            if not starts:
                longest = max(len(s) for s in segs)
                raise ConfigError(
                    f"moving-block bootstrap needs a gap-free segment of "
                    f"length >= {self.block_length}; longest available "
                    f"segment has length {longest}"
                )
            object.__setattr__(self, "_starts", np.concatenate(starts))
        else:
            object.__setattr__(self, "_starts", None)

    @classmethod
    def from_residuals(cls, residuals, mode: ResamplingMode,
                       block_length: int = 1, seed: int = 0,
                       pool=None) -> "ResamplingScheme":
        """Build a scheme from per-process residual series, gap-split.

        `pool` optionally restricts the source to the given process ids.
        """
        segments = []
        for r in residuals:
            if pool is not None and r.process_id not in pool:
                continue
            m = r.mask
            if not m.any():
                continue
            edges = np.flatnonzero(np.diff(m.astype(np.int8)))
            bounds = np.concatenate([[-1], edges, [len(m) - 1]])
            for a, b in zip(bounds[:-1], bounds[1:]):
                if m[a + 1]:
                    segments.append(r.values[a + 1: b + 1])
        if not segments:
            raise ConfigError("no observed residuals to resample from")
        return cls(mode, tuple(segments), seed, block_length)

    @property
    def n_source_values(self):
        return len(self._flat)

    def _rng_for(self, rep_index):
        return substream(self.seed, STREAM_RESAMPLE, rep_index)

    def _draw(self, length: int, rng) -> np.ndarray:
        if self.mode is ResamplingMode.SINGLE_OBSERVATION:
            return self._flat[rng.integers(0, len(self._flat), length)]
        n_blocks = -(-length // self.block_length)
        starts = self._starts[rng.integers(0, len(self._starts), n_blocks)]
        return self.assemble_blocks(starts, length)

    def assemble_blocks(self, starts, length: int) -> np.ndarray:
        """Concatenate the blocks at the given start positions, truncated."""
        starts = np.asarray(starts)
        idx = starts[:, None] + np.arange(self.block_length)[None, :]
        return self._flat[idx].reshape(-1)[:length]

    def resample(self, length: int, rep_index: int = 0) -> np.ndarray:
        """One synthetic series; deterministic given (seed, rep_index)."""
        if length < 1:
            raise ConfigError("resample length must be >= 1")
        return self._draw(length, self._rng_for(rep_index))

    def resample_matrix(self, n_reps: int, length: int,
                        rep_offset: int = 0) -> np.ndarray:
        """n_reps independent series as rows; row b uses the
        (rep_offset + b) replication stream."""
        out = np.empty((n_reps, length))
        for b in range(n_reps):
            out[b] = self._draw(length, self._rng_for(rep_offset + b))
        return out


@dataclass(frozen=True)
class ArlEstimate:
    """Monte-Carlo average run length with censoring diagnostics."""

    arl: float
    run_lengths: np.ndarray
    censored_fraction: float
    series_length_l: int

    def __post_init__(self):
        rl = np.asarray(self.run_lengths)
        object.__setattr__(self, "run_lengths", rl)
        object.__setattr__(self, "arl", float(np.mean(rl)))


@dataclass(frozen=True)
class DesignResult:
    chart: CalibratedChart
    iterations: tuple  # (h, estimated ARL) pairs in bisection order
    converged: bool


def _first_passage(x, k, h_plus, h_minus):
    """Run-length (1-based) of the two-sided chart per row; censored rows
    get the series length."""
    n_reps, length = x.shape
    cp = np.zeros(n_reps)
    cm = np.zeros(n_reps)
    rl = np.full(n_reps, length, dtype=np.int64)
    alive = np.ones(n_reps, dtype=bool)
    xt = np.ascontiguousarray(x.T)
    for t in range(length):
        col = xt[t]
        np.maximum(cp + col - k, 0.0, out=cp)
        np.minimum(cm + col + k, 0.0, out=cm)
        hit = alive & ((cp > h_plus) | (cm < h_minus))
        if hit.any():
            rl[hit] = t + 1
            alive &= ~hit
            if not alive.any():
                return rl, alive
    return rl, alive


def _montgomery_first_alerts(x, chart: CalibratedChart):
    """Rough shift-size estimate at each row's first alert (rows without an
    alert are skipped)."""
    n_reps, length = x.shape
    k = chart.k
    cp = np.zeros(n_reps)
    cm = np.zeros(n_reps)
    n_p = np.zeros(n_reps)
    n_m = np.zeros(n_reps)
    est = np.full(n_reps, np.nan)
    alive = np.ones(n_reps, dtype=bool)
    xt = np.ascontiguousarray(x.T)
    for t in range(length):
        col = xt[t]
        np.maximum(cp + col - k, 0.0, out=cp)
        np.minimum(cm + col + k, 0.0, out=cm)
        n_p = np.where(cp > 0, n_p + 1, 0)
        n_m = np.where(cm < 0, n_m + 1, 0)
        hit_p = alive & (cp > chart.h_plus)
        hit_m = alive & (cm < chart.h_minus) & ~hit_p
        if hit_p.any():
            est[hit_p] = k + cp[hit_p] / n_p[hit_p]
        if hit_m.any():
            est[hit_m] = cm[hit_m] / n_m[hit_m] - k
        alive &= ~(hit_p | hit_m)
        if not alive.any():
            break
    return est[np.isfinite(est)]


def _exceedance_traces(x, k, sides="two"):
    """Running max of the exceedance statistic per row, as float32.

    The first index where a row's trace exceeds h is that row's alert time
    for limit h, so one pass serves every candidate limit.
    """
    n_reps, length = x.shape
    cp = np.zeros(n_reps)
    cm = np.zeros(n_reps)
    run = np.zeros(n_reps)
    stat = np.empty(n_reps)
    traces = np.empty((n_reps, length), dtype=np.float32)
    xt = np.ascontiguousarray(x.T)
    for t in range(length):
        col = xt[t]
        if sides in ("two", "upper"):
            np.maximum(cp + col - k, 0.0, out=cp)
        if sides in ("two", "lower"):
            np.minimum(cm + col + k, 0.0, out=cm)
        if sides == "two":
            np.maximum(cp, -cm, out=stat)
        elif sides == "upper":
            stat = cp
        else:
            stat = -cm
        np.maximum(run, stat, out=run)
        traces[:, t] = run
    return traces


def _rl_from_traces(traces, h):
    """Run lengths for limit h from running-max traces (censored -> L)."""
    n_reps, length = traces.shape
    h32 = np.float32(h)
    rl = np.empty(n_reps, dtype=np.int64)
    for b in range(n_reps):
        idx = np.searchsorted(traces[b], h32, side="right")
        rl[b] = idx + 1 if idx < length else length
    censored = traces[:, -1] <= h32
    return rl, censored


def estimate_arl(scheme: ResamplingScheme, chart: CalibratedChart,
                 b_replications: int = DEFAULT_B, series_length: int = 1000,
                 shift: ShiftSpec | None = None,
                 rep_offset: int = 0) -> ArlEstimate:
    """Monte-Carlo ARL of the chart on resampled (optionally shifted) data.

    Each replication resamples a series of `series_length`, superposes the
    shift if given, and runs the two-sided chart from zero state; runs
    without an alert are censored at the series length.
    """
    if b_replications < 1 or series_length < 1:
        raise ConfigError("need b_replications >= 1 and series_length >= 1")
    x = scheme.resample_matrix(b_replications, series_length, rep_offset)
    if shift is not None:
        x = x + shift.waveform(series_length)[None, :]
    rl, censored = _first_passage(x, chart.k, chart.h_plus, chart.h_minus)
    frac = float(censored.mean())
    if frac > CENSOR_WARN_FRACTION:
        warnings.warn(
            f"{frac:.1%} of replications were censored at L={series_length}; "
            "the ARL estimate is biased low",
            CensoringWarning,
        )
    return ArlEstimate(float(rl.mean()), rl, frac, series_length)


def _calibrate_one_sided_traces(traces, target, rho, bounds, max_iterations,
                                max_widenings, h_resolution):
    length = traces.shape[1]

    def arl_at(h):
        rl, _ = _rl_from_traces(traces, h)
        return float(rl.mean())

    h_lo, h_hi = bounds
    if not h_lo < h_hi:
        raise ConfigError("control-limit bounds must satisfy h_L < h_U")
    lo_arl, hi_arl = arl_at(h_lo), arl_at(h_hi)
    widenings = 0
    while lo_arl >= target and widenings < max_widenings:
        h_lo *= 0.5
        lo_arl = arl_at(h_lo)
        widenings += 1
    while hi_arl <= target and widenings < max_widenings:
        h_hi *= 2.0
        hi_arl = arl_at(h_hi)
        widenings += 1
    if not (lo_arl < target < hi_arl):
        max_arl = arl_at(float(traces[:, -1].max()) + 1.0)
        raise ConvergenceError(
            f"target ARL {target} is not bracketed: ARL({h_lo:.3g})={lo_arl:.3g}, "
            f"ARL({h_hi:.3g})={hi_arl:.3g}; the no-alert ceiling on this source "
            f"is {max_arl:.3g} (full censoring at L={length})"
        )
    iterations = []
    best = (math.inf, None, None)
    converged = False
    h_mid = 0.5 * (h_lo + h_hi)
    for _ in range(max_iterations):
        h_mid = 0.5 * (h_lo + h_hi)
        arl_mid = arl_at(h_mid)
        iterations.append((h_mid, arl_mid))
        gap = abs(arl_mid - target)
        if gap < best[0]:
            best = (gap, h_mid, arl_mid)
        if gap <= rho:
            converged = True
            break
        if arl_mid < target:
            h_lo = h_mid
        else:
            h_hi = h_mid
        if h_hi - h_lo < h_resolution:
            break
    _, h_final, arl_final = best
    return h_final, arl_final, iterations, converged


def calibrate_control_limit(scheme: ResamplingScheme, k: float,
                            arl0_target: float, rho: float | None = None,
                            bounds=DEFAULT_BOUNDS,
                            b_replications: int = DEFAULT_B,
                            series_length: int | None = None,
                            sides: str = "two",
                            max_iterations: int = DEFAULT_MAX_ITER,
                            max_widenings: int = DEFAULT_MAX_WIDENINGS,
                            h_resolution: float = DEFAULT_H_RESOLUTION,
                            gap_policy: GapPolicy | None = None,
                            rep_offset: int = 0) -> DesignResult:
    """Search the control limit ("searching algorithm") by bisection.

    One replication set is resampled up front and shared by every candidate
    limit (common random numbers), which makes the estimated ARL monotone in
    h and the bisection well-posed.  `sides`:

    - "two": symmetric two-sided limits (h- = -h+), the default;
    - "upper"/"lower": one-sided chart (the other limit is infinite);
    - "asymmetric": each side calibrated independently to twice the target,
      so the combined false-alarm rate comes out near the target.
    """
    if arl0_target <= 1:
        raise ConfigError("ARL0 target must exceed 1")
    if k <= 0:
        raise ConfigError("allowance k must be positive")
    if rho is None:
        rho = 0.05 * arl0_target
    if series_length is None:
        series_length = int(10 * arl0_target)
    x = scheme.resample_matrix(b_replications, series_length, rep_offset)
    if sides == "asymmetric":
        per_side = []
        all_iters = []
        conv = True
        for side in ("upper", "lower"):
            traces = _exceedance_traces(x, k, side)
            h, _, iters, ok = _calibrate_one_sided_traces(
                traces, 2 * arl0_target, rho, bounds, max_iterations,
                max_widenings, h_resolution)
            per_side.append(h)
            all_iters += iters
            conv &= ok
        h_plus, h_low = per_side
        rl, censored = _first_passage(x, k, h_plus, -h_low)
        chart = CalibratedChart(
            k, h_plus, -h_low,
            gap_policy or GapPolicy.reset_always(),
            ChartProvenance(arl0_target, b_replications,
                            scheme.block_length, scheme.seed,
                            float(rl.mean()), float(censored.mean()),
                            scheme.mode.value),
        )
        return DesignResult(chart, tuple(all_iters), conv)
    if sides not in ("two", "upper", "lower"):
        raise ConfigError(f"unknown sides {sides!r}")
    traces = _exceedance_traces(x, k, sides)
    h, arl_final, iterations, converged = _calibrate_one_sided_traces(
        traces, arl0_target, rho, bounds, max_iterations, max_widenings,
        h_resolution)
    _, censored = _rl_from_traces(traces, h)
    h_plus = h if sides in ("two", "upper") else math.inf
    h_minus = -h if sides in ("two", "lower") else -math.inf
    chart = CalibratedChart(
        k, h_plus, h_minus,
        gap_policy or GapPolicy.reset_always(),
        ChartProvenance(arl0_target, b_replications, scheme.block_length,
                        scheme.seed, arl_final, float(censored.mean()),
                        scheme.mode.value),
    )
    return DesignResult(chart, tuple(iterations), converged)


@dataclass(frozen=True)
class ShiftSizeResult:
    delta: float
    iterations: tuple  # per outer iteration: (k, h, quantile estimate)
    converged: bool


def estimate_shift_size(scheme_ic: ResamplingScheme,
                        scheme_oc: ResamplingScheme, delta0: float,
                        rho: float = 0.1, quantile_q: float = 0.5,
                        arl0_target: float = 200.0,
                        b_replications: int = DEFAULT_B,
                        series_length: int | None = None,
                        max_outer_iterations: int = 10,
                        **calibrate_kwargs) -> ShiftSizeResult:
    """Estimate the deviation size carried by out-of-control data.

    Iterates: design a chart for k = delta/2 on the in-control source, run
    it on bootstrapped out-of-control series, read the rough shift size at
    each first alert, and move delta to the chosen quantile of the absolute
    estimates.
    """
    if delta0 <= 0:
        raise ConfigError("initial shift size must be positive")
    delta = float(delta0)
    iterations = []
    for it in range(max_outer_iterations):
        design = calibrate_control_limit(
            scheme_ic, delta / 2, arl0_target,
            b_replications=b_replications, series_length=series_length,
            **calibrate_kwargs)
        length = series_length or int(10 * arl0_target)
        x = scheme_oc.resample_matrix(b_replications, length,
                                      rep_offset=(it + 1) * b_replications)
        estimates = _montgomery_first_alerts(x, design.chart)
        if not len(estimates):
            raise PipelineError(
                f"no alerts on the out-of-control source at delta={delta:.3g}; "
                "it is indistinguishable from the in-control source"
            )
        new_delta = float(np.quantile(np.abs(estimates), quantile_q))
        iterations.append((delta / 2, design.chart.h_plus, new_delta))
        if abs(new_delta - delta) <= rho:
            return ShiftSizeResult(new_delta, tuple(iterations), True)
        delta = new_delta
    return ShiftSizeResult(delta, tuple(iterations), False)


@dataclass(frozen=True)
class AllowanceResult:
    k: float
    chart: CalibratedChart
    table: tuple  # (k, h, estimated ARL1) per grid point


def optimize_allowance(scheme_ic: ResamplingScheme, delta: float,
                       arl0_target: float, k_grid,
                       b_replications: int = DEFAULT_B,
                       series_length: int | None = None,
                       **calibrate_kwargs) -> AllowanceResult:
    """Pick the allowance minimizing the out-of-control ARL over a grid.

    Every candidate is calibrated to the same in-control ARL target, then
    judged on its detection delay for a planted constant jump of size
    `delta`; the jump runs share one replication stream across candidates so
    the comparison is paired.  Ties go to the k closest to delta/2.
    """
    k_grid = [float(k) for k in k_grid]
    if not k_grid:
        raise ConfigError("allowance grid must be non-empty")
    length = series_length or int(10 * arl0_target)
    shift = ShiftSpec(ShiftForm.JUMP, delta, onset=0)
    rows = []
    for k in k_grid:
        try:
            design = calibrate_control_limit(
                scheme_ic, k, arl0_target, b_replications=b_replications,
                series_length=length, **calibrate_kwargs)
        except ConvergenceError as exc:
            warnings.warn(f"allowance k={k:.3g} skipped: {exc}", CensoringWarning)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CensoringWarning)
            arl1 = estimate_arl(scheme_ic, design.chart, b_replications,
                                length, shift=shift,
                                rep_offset=7 * b_replications)
        rows.append((k, design.chart, arl1.arl))
    if not rows:
        raise PipelineError("every allowance candidate failed calibration")
    best_arl = min(r[2] for r in rows)
    candidates = [r for r in rows if r[2] == best_arl]
    candidates.sort(key=lambda r: (abs(r[0] - delta / 2), r[0]))
    k_best, chart_best, _ = candidates[0]
    return AllowanceResult(
        k_best, chart_best,
        tuple((k, c.h_plus, a) for k, c, a in rows),
    )
