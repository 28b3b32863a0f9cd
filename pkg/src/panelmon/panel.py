"""Panel data model and the phase-0 decomposition.

A panel of N processes observed on a shared, equally spaced time grid is
decomposed in two steps: a robust cross-sectional reference (the per-time
median) removes the signal common to all processes, and a long moving
average removes each process's slowly varying individual level.  Both a
multiplicative mode (divide by the reference) and an additive mode
(subtract it) are supported.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


class ModelMode(enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class Alignment(enum.Enum):
    CENTERED = "centered"
    LEFT_SIDED = "left_sided"


# below this many observed processes the cross-sectional median is not robust
DEFAULT_MIN_COUNT = 3
# windows with a smaller observed fraction produce a missing output
DEFAULT_MIN_VALID_FRACTION = 0.5


def _as_float_matrix(values):
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Panel:
    """N x T observations with an explicit missing-value mask.

    `mask` is True where a value was observed; `values` is NaN wherever the
    mask is False.  The time grid is uniform: sample t sits at
    ``start_time + t * time_step``.
    """

    values: np.ndarray
    mask: np.ndarray
    time_step: float = 1.0
    process_ids: tuple = ()
    start_time: float = 0.0

    def __post_init__(self):
        values = _as_float_matrix(self.values)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != values.shape:
            raise DataError("mask shape does not match values shape")
        n, t = values.shape
        if n < 2 or t < 1:
            raise DataError(f"panel needs N >= 2 and T >= 1, got {n} x {t}")
        if self.time_step <= 0:
            raise DataError("time_step must be positive")
        if not np.all(np.isfinite(values[mask])):
            raise DataError("observed values must be finite")
        values = values.copy()
        values[~mask] = np.nan
        ids = tuple(self.process_ids) if self.process_ids else tuple(
            f"p{i}" for i in range(n)
        )
        if len(ids) != n:
            raise DataError(f"expected {n} process ids, got {len(ids)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "process_ids", ids)

    @property
    def n_processes(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.start_time + np.arange(self.n_times) * self.time_step

    def index_of(self, process_id) -> int:
        try:
            return self.process_ids.index(process_id)
        except ValueError:
            raise DataError(
                f"unknown process id {process_id!r}; known ids: "
                f"{', '.join(self.process_ids)}"
            ) from None

    def with_values(self, values, mask) -> "Panel":
        return Panel(values, mask, self.time_step, self.process_ids, self.start_time)


@dataclass(frozen=True)
class DetrendedPanel:
    """Decomposition output: per-process fluctuations around the panel.

    `eta_hat` holds the detrended series (common signal and individual
    levels removed), `common_signal` the per-time robust reference, and
    `levels` the moving-average level estimate that was subtracted (kept
    for reporting).
    """

    eta_hat: np.ndarray
    mask: np.ndarray
    common_signal: np.ndarray
    levels: np.ndarray
    process_ids: tuple = ()
    time_step: float = 1.0
    start_time: float = 0.0

    def __post_init__(self):
        eta = _as_float_matrix(self.eta_hat)
        mask = np.asarray(self.mask, dtype=bool)
        eta = eta.copy()
        eta[~mask] = np.nan
        object.__setattr__(self, "eta_hat", eta)
        object.__setattr__(self, "mask", mask)
        ids = tuple(self.process_ids) if self.process_ids else tuple(
            f"p{i}" for i in range(eta.shape[0])
        )
        object.__setattr__(self, "process_ids", ids)

    @property
    def n_processes(self):
        return self.eta_hat.shape[0]

    @property
    def n_times(self):
        return self.eta_hat.shape[1]

    @property
    def times(self):
        return self.start_time + np.arange(self.n_times) * self.time_step

    def index_of(self, process_id) -> int:
        try:
            return self.process_ids.index(process_id)
        except ValueError:
            raise DataError(f"unknown process id {process_id!r}") from None


def estimate_common_signal(panel: Panel, min_count: int = DEFAULT_MIN_COUNT):
    """Cross-sectional median at each time, over observed entries only.

    Times with fewer than `min_count` observed processes are returned as
    NaN; a median of very few points is not a robust reference.
    """
    if panel.n_processes < 2:
        raise ConfigError("common-signal estimation needs at least 2 processes")
    counts = panel.mask.sum(axis=0)
    c_hat = np.full(panel.n_times, np.nan)
    ok = counts >= max(1, min_count)
    if ok.any():
        cols = np.where(panel.mask[:, ok], panel.values[:, ok], np.nan)
        c_hat[ok] = np.nanmedian(cols, axis=0)
    return c_hat


def remove_common_signal(panel: Panel, c_hat, mode: ModelMode) -> Panel:
    """Divide (multiplicative) or subtract (additive) the common signal.

    Under the multiplicative mode the ratio is undefined where the common
    signal is missing or <= 0; those entries come back missing.
    """
    c_hat = np.asarray(c_hat, dtype=float)
    if c_hat.shape != (panel.n_times,):
        raise ConfigError(
            f"common signal length {c_hat.shape} does not match T={panel.n_times}"
        )
    c_ok = np.isfinite(c_hat)
    if mode is ModelMode.MULTIPLICATIVE:
        c_ok = c_ok & (c_hat > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = panel.values / np.where(c_ok, c_hat, np.nan)[None, :]
    elif mode is ModelMode.ADDITIVE:
        out = panel.values - np.where(c_ok, c_hat, np.nan)[None, :]
    else:
        raise ConfigError(f"unknown model mode {mode!r}")
    mask = panel.mask & c_ok[None, :]
    out = np.where(mask, out, np.nan)
    return panel.with_values(out, mask)


def _window_bounds(window: int, alignment: Alignment):
    if alignment is Alignment.CENTERED:
        # even windows take the extra sample from the past
        return window // 2, (window - 1) // 2
    if alignment is Alignment.LEFT_SIDED:
        return window - 1, 0
    raise ConfigError(f"unknown alignment {alignment!r}")


def masked_window_mean(values, mask, window: int, alignment: Alignment,
                       min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION):
    """Sliding-window mean of observed entries along the last axis.

    Windows truncate to in-range points at the series edges.  An output is
    missing when the observed fraction of the (truncated) window falls
    below `min_valid_fraction`.  Works on 1-D series and on N x T matrices.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    t_len = values.shape[-1]
    if window < 1:
        raise ConfigError("window must be >= 1")
    if window > t_len:
        raise ConfigError(f"window {window} exceeds series length {t_len}")
    left, right = _window_bounds(window, alignment)
    filled = np.where(mask, values, 0.0)
    csum = np.cumsum(filled, axis=-1)
    ccnt = np.cumsum(mask, axis=-1)
    idx = np.arange(t_len)
    hi = np.minimum(idx + right, t_len - 1)
    lo = np.maximum(idx - left, 0)
    span = hi - lo + 1

    def window_sum(c):
        total = np.take(c, hi, axis=-1)
        head = np.take(c, np.maximum(lo - 1, 0), axis=-1)
        head = np.where(lo >= 1, head, 0)
        return total - head

    wsum = window_sum(csum)
    wcnt = window_sum(ccnt)
    valid = (wcnt >= 1) & ((wcnt / span) >= min_valid_fraction - 1e-12)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(valid, wsum / np.maximum(wcnt, 1), np.nan)
    return out, valid


def ma_filter(series, mask, window: int, alignment: Alignment = Alignment.CENTERED,
              min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION):
    """Moving-average filter of a single masked series.

    Returns (filtered, mask).  Left-sided windows use past and current
    samples only, for real-time use.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise DataError("ma_filter expects a 1-D series")
    return masked_window_mean(series, mask, window, alignment, min_valid_fraction)


def smooth_panel(panel: Panel, window: int, alignment: Alignment = Alignment.CENTERED,
                 min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION) -> Panel:
    """MA-filter every process of a panel with one shared window."""
    out, valid = masked_window_mean(
        panel.values, panel.mask, window, alignment, min_valid_fraction
    )
    return panel.with_values(out, valid)


def remove_levels(eta_tilde: Panel, level_window: int,
                  alignment: Alignment = Alignment.CENTERED,
                  min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION,
                  common_signal=None) -> DetrendedPanel:
    """Subtract each process's moving-average level from its series.

    The window is shared by all processes so the level estimates stay
    comparable.  The level traces are kept in the output for reporting.
    """
    levels, level_mask = masked_window_mean(
        eta_tilde.values, eta_tilde.mask, level_window, alignment,
        min_valid_fraction,
    )
    mask = eta_tilde.mask & level_mask
    eta_hat = np.where(mask, eta_tilde.values - levels, np.nan)
    if common_signal is None:
        common_signal = np.full(eta_tilde.n_times, np.nan)
    return DetrendedPanel(
        eta_hat=eta_hat,
        mask=mask,
        common_signal=np.asarray(common_signal, dtype=float),
        levels=levels,
        process_ids=eta_tilde.process_ids,
        time_step=eta_tilde.time_step,
        start_time=eta_tilde.start_time,
    )


def decompose(panel: Panel, mode: ModelMode, smoothing_window: int,
              level_window: int, alignment: Alignment = Alignment.CENTERED,
              min_count: int = DEFAULT_MIN_COUNT,
              min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION) -> DetrendedPanel:
    """Full phase-0 decomposition.

    Pipeline order: remove the cross-sectional common signal, suppress the
    short-term regime with `smoothing_window`, then strip the slowly
    varying individual levels with `level_window`.
    """
    c_hat = estimate_common_signal(panel, min_count)
    eta_tilde = remove_common_signal(panel, c_hat, mode)
    if smoothing_window > 1:
        eta_tilde = smooth_panel(eta_tilde, smoothing_window, alignment,
                                 min_valid_fraction)
    return remove_levels(eta_tilde, level_window, alignment,
                         min_valid_fraction, common_signal=c_hat)
