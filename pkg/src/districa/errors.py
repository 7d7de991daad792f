"""Exception types shared across the package."""


class DistricaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DistricaError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailureError(DistricaError):
    """A numerical routine failed to produce a usable result."""


class RankDeficiencyError(NumericalFailureError):
    """A covariance matrix is (numerically) rank deficient where full rank is required."""


class DegenerateDirectionError(NumericalFailureError):
    """A candidate direction collapsed to (numerical) zero; caller should restart."""


class ExtractionFailureError(NumericalFailureError):
    """Component extraction kept hitting degenerate directions after repeated restarts."""


class GraphGenerationError(DistricaError):
    """Random graph generation failed to produce a connected graph."""


class ConfigError(DistricaError):
    """An experiment configuration is malformed or inconsistent."""
