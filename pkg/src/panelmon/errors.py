"""Exception and warning types shared across the package."""


class PanelmonError(Exception):
    """Base class for all package errors."""


class ConfigError(PanelmonError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class DataError(PanelmonError):
    """Invalid or inconsistent input data (CLI exit code 3)."""


class ConvergenceError(PanelmonError):
    """A numerical procedure failed to converge (CLI exit code 4)."""


class PipelineError(PanelmonError):
    """A pipeline stage could not produce a usable result."""


class DegenerateClusteringWarning(UserWarning):
    """Clustering collapsed (identical scores, singleton pool, ...)."""


class CensoringWarning(UserWarning):
    """Monte-Carlo run lengths were censored often enough to bias the ARL."""


class SolverWarning(UserWarning):
    """An iterative solver stopped before reaching its tolerance."""


class StandardizationWarning(UserWarning):
    """Residuals dropped because the local scale estimate was unusable."""
