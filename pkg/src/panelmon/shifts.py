"""Deviation generators superposed on residual series.

Three forms are supported: a step change, a power-law drift, and a
sinusoidal oscillation.  `delta` is the magnitude label a characterizer is
trained to recover; the drift scale/power and the oscillation frequency are
preset literals of the reference configuration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class ShiftForm(enum.IntEnum):
    JUMP = 0
    TREND = 1
    OSCILLATION = 2


@dataclass(frozen=True)
class ShiftSpec:
    """One deviation: its form, magnitude, and onset index."""

    form: ShiftForm
    delta: float
    onset: int = 0
    eta_freq: float = 0.04  # oscillation frequency (cycles per 2 samples)
    trend_scale: float = 150.0
    trend_power: float = 1.5

    def __post_init__(self):
        if self.onset < 0:
            raise ConfigError("shift onset must be >= 0")
        if self.form is ShiftForm.OSCILLATION and not self.eta_freq > 0:
            raise ConfigError("oscillation frequency must be positive")

    def waveform(self, length: int) -> np.ndarray:
        """Additive deviation evaluated on t = 0..length-1."""
        out = np.zeros(length)
        if self.onset >= length:
            return out
        t = np.arange(length - self.onset, dtype=float)
        if self.form is ShiftForm.JUMP:
            out[self.onset:] = self.delta
        elif self.form is ShiftForm.TREND:
            out[self.onset:] = (self.delta / self.trend_scale) * t**self.trend_power
        elif self.form is ShiftForm.OSCILLATION:
            out[self.onset:] = np.sin(self.eta_freq * np.pi * t) * self.delta
        else:
            raise ConfigError(f"unknown shift form {self.form!r}")
        return out
