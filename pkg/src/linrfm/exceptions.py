"""Exception hierarchy shared by every solver in the package."""


class LinRFMError(Exception):
    """Base class for all package errors."""


class NonPsdInput(LinRFMError, ValueError):
    """A matrix expected to be positive semidefinite has a clearly negative eigenvalue."""


class NumericFailure(LinRFMError, ArithmeticError):
    """An eigen/singular value solver did not converge."""


class SingularSystem(LinRFMError, ArithmeticError):
    """An unregularized interpolation system is numerically singular."""


class SingularRowSystem(SingularSystem):
    """A per-row Gram system of the SVD-free solver is singular."""

    def __init__(self, row, message=None):
        self.row = row
        super().__init__(message or f"row {row}: Gram submatrix is singular; use ridge > 0")


class DivergentIntegral(LinRFMError, ArithmeticError):
    pass


class QuadratureFailure(LinRFMError, ArithmeticError):
    pass


class InvalidDims(LinRFMError, ValueError):
    pass


class MissingGroundTruth(LinRFMError, ValueError):
    pass


class FormatError(LinRFMError, ValueError):
    """A problem file is malformed."""


class Divergence(LinRFMError, ArithmeticError):
    """Training loss blew up."""


class NonConvergence(LinRFMError, RuntimeError):
    pass


class ShapeMismatch(LinRFMError, ValueError):
    pass


class DegenerateInput(LinRFMError, ValueError):
    pass


class PatternMismatch(LinRFMError, ValueError):
    """The observation pattern does not satisfy a result's preconditions."""


class ConfigError(LinRFMError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
