"""Exception hierarchy shared by every zoh module."""
from __future__ import annotations


class ZohError(Exception):
    """Base class for all errors raised by zoh."""


class ObjectiveError(ZohError, ValueError):
    """Invalid objective construction or a point of the wrong dimension."""


class EstimatorError(ZohError, ValueError):
    """Invalid estimator configuration or inconsistent estimator inputs."""


class ImportanceError(ZohError, ValueError):
    """Invalid coordinate budget or probability vector."""


class OptimizeConfigError(ZohError, ValueError):
    """Optimizer configuration whose knobs contradict each other."""


class DivergenceError(ZohError):
    """An iterate left the finite region the optimizer is allowed to explore."""


class DiagnosticsError(ZohError):
    """A bound cannot be evaluated (unknown metadata, no trials, ...)."""


class ConfigError(ZohError):
    """Experiment config that does not parse or validate."""

    def __init__(self, message: str, location: str | None = None) -> None:
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
