"""panelmon: nonparametric monitoring of noisy time series panels.

Decomposes a panel against a robust cross-sectional reference, selects
in-control processes, calibrates CUSUM control limits by (block)
bootstrap, and characterizes detected deviations with embedded
support-vector regression and classification.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    PanelmonError,
    PipelineError,
)
from .panel import (
    Alignment,
    DetrendedPanel,
    ModelMode,
    Panel,
    decompose,
    estimate_common_signal,
    ma_filter,
    remove_common_signal,
    remove_levels,
    smooth_panel,
)

__all__ = [
    "Alignment",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DetrendedPanel",
    "ModelMode",
    "Panel",
    "PanelmonError",
    "PipelineError",
    "decompose",
    "estimate_common_signal",
    "ma_filter",
    "remove_common_signal",
    "remove_levels",
    "smooth_panel",
]
