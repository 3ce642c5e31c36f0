"""Exception hierarchy.

Errors are grouped so the command-line driver can map them to exit codes:
``DataError`` for problems with the input data (exit 2), ``NumericalError``
for failures of the numerical machinery (exit 3), and plain ``PartmestError``
for configuration mistakes (exit 1).
"""


class PartmestError(Exception):
    """Base class for all package errors."""


class DataError(PartmestError):
    """The input data violates a precondition."""


class NumericalError(PartmestError):
    """A numerical routine failed beyond its repair budget."""


# -- partition ---------------------------------------------------------------

class DegenerateDomain(DataError):
    """Domain has lower >= upper in some coordinate."""


class OutOfDomain(DataError):
    """A point lies outside the closure of the domain."""


class QuasiUniformityViolated(DataError):
    """Cell diameters exceed the configured max/min ratio."""


# -- basis -------------------------------------------------------------------

class UnsupportedOrder(PartmestError):
    """Requested basis order is outside the supported range."""


class DerivativeOrderTooHigh(PartmestError):
    """Requested derivative exceeds the basis derivative cap."""


# -- loss models -------------------------------------------------------------

class LinkRangeInvalid(PartmestError):
    """Link range is incompatible with the loss."""


class InvalidP(PartmestError):
    """Lp exponent outside (1, 2]."""


class ResponseOutOfRange(DataError):
    """Responses violate the loss model's admissible range."""


class NonPositiveTuning(PartmestError):
    """Robustness tuning constant must be positive."""


# -- solver ------------------------------------------------------------------

class CellTooSparse(DataError):
    """A cell holds fewer observations than the configured minimum."""


class NotConverged(NumericalError):
    """Iterative solve did not reach the gradient tolerance."""


class BoxRequired(PartmestError):
    """Non-convex composite loss needs a box radius (explicit or auto)."""


# -- sandwich / inference ----------------------------------------------------

class SingularQ(NumericalError):
    """Gram/Hessian matrix is numerically singular after regularization."""


class CovarianceNotPSD(NumericalError):
    """Simulation covariance could not be repaired to positive semidefinite."""


class WrongModel(PartmestError):
    """Operation requires a different loss/link combination."""


class BasisMismatch(PartmestError):
    """Two fits do not share the same basis/loss structure."""
