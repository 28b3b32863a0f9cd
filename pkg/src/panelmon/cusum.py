"""Two-sided CUSUM chart over standardized residuals.

The recursion accumulates deviations beyond the allowance k:

    C+ = max(0, C+ + e - k)        alert when C+ > h+
    C- = min(0, C- + e + k)        alert when C- < h-

Missing samples are handled by policy: either the statistics reset at every
gap, or they are held frozen across gaps up to a length limit and reset
only for longer ones.

The rough shift-size readout divides the triggering statistic by the number
of steps it has been nonzero (Montgomery's estimator).  Note the lower-side
form is sometimes printed as ``-k - C-/N-``; that version fails the
constant-shift identity (a planted constant shift of -2 comes back
positive), so the corrected ``C-/N- - k`` is used here.  ``tests`` pin this
with planted-shift fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .patterns import ResidualSeries

UPPER = "upper"
LOWER = "lower"


@dataclass(frozen=True)
class GapPolicy:
    """What happens to the chart state at missing samples."""

    mode: str  # "reset_always" | "propagate_up_to"
    limit: int = 0

    def __post_init__(self):
        if self.mode not in ("reset_always", "propagate_up_to"):
            raise ConfigError(f"unknown gap policy mode {self.mode!r}")
        if self.mode == "propagate_up_to" and self.limit < 1:
            raise ConfigError("propagate_up_to needs a positive gap limit")

    @classmethod
    def reset_always(cls):
        return cls("reset_always")

    @classmethod
    def propagate_up_to(cls, limit: int):
        return cls("propagate_up_to", int(limit))


@dataclass(frozen=True)
class ChartProvenance:
    arl0_target: float | None = None
    b_replications: int | None = None
    block_length: int | None = None
    seed: int | None = None
    achieved_arl0: float | None = None
    censored_fraction: float | None = None
    scheme_mode: str | None = None


@dataclass(frozen=True)
class CalibratedChart:
    """Allowance, control limits, gap policy, and where they came from."""

    k: float
    h_plus: float
    h_minus: float
    gap_policy: GapPolicy = field(default_factory=GapPolicy.reset_always)
    provenance: ChartProvenance = field(default_factory=ChartProvenance)

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError("allowance k must be positive")
        if not (self.h_minus < 0 < self.h_plus):
            raise ConfigError("control limits must satisfy h- < 0 < h+")


@dataclass(frozen=True)
class ChartState:
    c_plus: float = 0.0
    c_minus: float = 0.0
    j: int = 0
    gap_run: int = 0
    n_plus: int = 0
    n_minus: int = 0


@dataclass(frozen=True)
class AlertEvent:
    """A control-limit crossing.

    `n_nonzero` counts the steps the triggering statistic had been nonzero
    when the alert fired, which is the denominator of the rough shift-size
    estimate.
    """

    time: int
    side: str
    statistic: float
    n_nonzero: int


def cusum_step(state: ChartState, residual: float, k: float) -> ChartState:
    """One recursion step on an observed residual."""
    cp = max(0.0, state.c_plus + residual - k)
    cm = min(0.0, state.c_minus + residual + k)
    return ChartState(
        c_plus=cp,
        c_minus=cm,
        j=state.j + 1,
        gap_run=0,
        n_plus=state.n_plus + 1 if cp > 0 else 0,
        n_minus=state.n_minus + 1 if cm < 0 else 0,
    )


@dataclass(frozen=True)
class ChartRun:
    alerts: tuple
    c_plus: np.ndarray
    c_minus: np.ndarray


def run_chart(residuals: ResidualSeries, chart: CalibratedChart,
              restart_on_alert: bool = True) -> ChartRun:
    """Run the chart over one residual series.

    An alert is emitted whenever a statistic crosses into violation.  With
    `restart_on_alert` both statistics reset to zero after each alert (the
    triggering observation is consumed); without it they keep accumulating
    and the next alert on that side fires on the next crossing.
    """
    t_len = residuals.n_times
    policy = chart.gap_policy
    state = ChartState()
    trace_p = np.zeros(t_len)
    trace_m = np.zeros(t_len)
    alerts = []
    viol_p = viol_m = False
    for t in range(t_len):
        if not residuals.mask[t]:
            if policy.mode == "reset_always":
                state = ChartState(j=state.j, gap_run=state.gap_run + 1)
                viol_p = viol_m = False
            else:
                gap_run = state.gap_run + 1
                if gap_run > policy.limit:
                    state = ChartState(j=state.j, gap_run=gap_run)
                    viol_p = viol_m = False
                else:
                    state = replace(state, gap_run=gap_run)
        else:
            state = cusum_step(state, float(residuals.values[t]), chart.k)
            hit_p = state.c_plus > chart.h_plus
            hit_m = state.c_minus < chart.h_minus
            if hit_p and not viol_p:
                alerts.append(AlertEvent(t, UPPER, state.c_plus, state.n_plus))
            if hit_m and not viol_m:
                alerts.append(AlertEvent(t, LOWER, state.c_minus, state.n_minus))
            fired = (hit_p and not viol_p) or (hit_m and not viol_m)
            if restart_on_alert and fired:
                state = ChartState(j=state.j)
                viol_p = viol_m = False
            else:
                viol_p, viol_m = hit_p, hit_m
        trace_p[t] = state.c_plus
        trace_m[t] = state.c_minus
    return ChartRun(tuple(alerts), trace_p, trace_m)


def montgomery_estimate(alert: AlertEvent, k: float) -> float:
    """Rough shift size, in residual standard-deviation units."""
    if alert.n_nonzero < 1:
        raise ValueError("shift estimate undefined: statistic never nonzero")
    if alert.side == UPPER:
        return k + alert.statistic / alert.n_nonzero
    if alert.side == LOWER:
        return alert.statistic / alert.n_nonzero - k
    raise ValueError(f"unknown alert side {alert.side!r}")
