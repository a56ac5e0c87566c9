from __future__ import annotations


class SpotflowError(Exception):
    """Base class for every error raised by the spotflow library."""


class DimensionError(SpotflowError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(SpotflowError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DomainError(SpotflowError, ValueError):
    """A scalar argument lies outside the domain of the operation."""


class CacheIncompleteError(SpotflowError, RuntimeError):
    """The condition cache lacks an entry a step needs."""


class RoutingInvariantError(SpotflowError, RuntimeError):
    """Active and reuse sets overlap or do not cover the grid."""


class ConsistencyError(SpotflowError, RuntimeError):
    """A pipeline-internal invariant was broken during a run."""


class ReportIOError(SpotflowError, OSError):
    """Writing or reading a report artifact failed."""
