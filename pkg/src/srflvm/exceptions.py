"""Exception types distinguishing data problems from numerical failures."""


class DataValidationError(ValueError):
    """Raised when input data violate the declared observation family."""


class NumericalError(RuntimeError):
    """Raised when a sampler encounters non-finite or degenerate values."""
