"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RelsynError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RelsynError):
    """Matrix or system dimensions are mutually inconsistent."""


class WellPosednessError(RelsynError):
    """A feedback interconnection has a singular static loop."""


class DomainError(RelsynError):
    """An input lies outside the mathematical domain of an operation."""


class MeasurementMatrixError(RelsynError):
    """A sensing matrix does not have the one-plus/one-minus row form."""


class DecompositionError(RelsynError):
    """A map cannot be split into per-component relative blocks.

    Attributes
    ----------
    component : int
        Zero-based index of the offending connected component.
    tap : int or None
        Impulse-response tap at which the violation occurs (None for a
        static matrix).
    """

    def __init__(self, message: str, component: int, tap: int | None = None):
        super().__init__(message)
        self.component = component
        self.tap = tap


class NominalControllerError(RelsynError):
    """Base class for nominal-controller validation failures."""


class NominalUnstableError(NominalControllerError):
    """The nominal controller is not a stable system."""


class NominalNotRelativeError(NominalControllerError):
    """The nominal controller does not annihilate a component indicator."""


class NominalNotStabilizingError(NominalControllerError):
    """The nominal controller fails to stabilize the extended plant."""


class StructureViolationError(RelsynError):
    """A structural precondition on an information structure fails.

    Carries an optional certificate: for a quadratic-invariance failure this
    is the violating index quadruple (i, j, k, m).
    """

    def __init__(self, message: str, certificate: tuple | None = None):
        super().__init__(message)
        self.certificate = certificate
