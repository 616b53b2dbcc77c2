"""Exception types raised across the lab."""


class FinslerLabError(Exception):
    """Base class for all lab errors."""


class InvalidMetric(FinslerLabError):
    """Coefficients do not define a Finsler metric at a queried point."""


class ZeroVector(FinslerLabError):
    """A direction-dependent tensor was requested at y = 0."""


class ZeroCovector(FinslerLabError):
    """A covector-dependent tensor was requested at xi = 0."""


class NoConvergence(FinslerLabError):
    """An iterative solve hit its iteration cap."""


class StepFailure(FinslerLabError):
    """Geodesic integration broke down (step underflow or metric breakdown)."""


class DomainError(FinslerLabError):
    """Argument outside the admissible range of a comparison function."""


class NonMinimal(FinslerLabError):
    """A query point lies beyond the minimal segment of its radial geodesic."""


class DegenerateMesh(FinslerLabError):
    """A mesh cell has non-positive area."""


class PreconditionFailed(FinslerLabError):
    """Hypotheses of an inequality check are not met by the input."""


class NonPositive(FinslerLabError):
    """A function required to be positive is not."""


class InsufficientRegularity(FinslerLabError):
    """Discrete gradient vanishes on too many cells for a Hessian surrogate."""


class UnsupportedSpace(FinslerLabError):
    """The requested computation is not available for this metric variant."""


class HypothesisRefused(FinslerLabError):
    """A probe needs a curvature hypothesis the space is not certified for."""


class ConfigError(FinslerLabError):
    """A configuration document could not be parsed."""
