"""Exception types shared across the package.

Each class marks a distinct contract violation so callers and tests can
discriminate failure modes without parsing messages.
"""


class PamError(Exception):
    """Base class for all package errors."""


class InvalidGeometryError(PamError, ValueError):
    """Non-positive mesh width or zero cell count."""


class UnsupportedTransformError(PamError, ValueError):
    """Requested noise transform has no exact grid representation."""


class ConfigurationError(PamError, ValueError):
    """Scheme parameters violate a stability or setup requirement."""


class RangeError(PamError, IndexError):
    """Requested window or point lies outside the grid."""


class BudgetError(PamError, ValueError):
    """Requested computation exceeds an explicit cost cap."""


class DomainError(PamError, ValueError):
    """Parameters violate the stated hypothesis of an identity or bound."""


class QuadratureFailureError(PamError, RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class PositivityViolationError(PamError, ValueError):
    """A field or partition function that must be positive is not."""


class UndefinedNormalizationError(PamError, ValueError):
    """Normalized field requested at equal times, where it is 1 by convention."""


class InvalidMeasureError(PamError, ValueError):
    """Initial/terminal data with zero or negative mass."""


class BandConnectivityError(PamError, ValueError):
    """Index pair outside the discrete propagation band; the kernel is structurally zero there."""
