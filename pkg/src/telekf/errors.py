"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """A caller-side precondition was violated (dimensions, lengths, ranges)."""


class SingularInnovationError(ArithmeticError):
    """Innovation covariance is not positive definite.

    Carries ``condition`` — an estimate of the condition number of the
    innovation covariance at the point of failure (``inf`` when it is
    exactly singular).
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class IllConditionedDataError(ValueError):
    """Regression data is rank deficient and the fit is not exact.

    Carries ``condition`` — the ratio of the largest to smallest singular
    value of the regressor matrix.
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class UnsupportedStructureError(ValueError):
    """Model structure cannot be realized for filtering (static or feedthrough)."""


class KinematicsFormatError(ValueError):
    """Kinematics text did not match the expected layout; message names row/column."""


class UnknownChannelNameError(KeyError):
    """A requested channel label does not exist; message lists available names."""
