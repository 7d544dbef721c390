"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a structural contract (bad spec, bad shape,
    bad file)."""


class DegenerateDataError(ValidationError):
    """Raised when data are too degenerate to fit (e.g. all values identical)."""


class NonConvergenceWarning(UserWarning):
    """Emitted when an iterative routine stops before meeting its convergence
    target but still produces usable output."""
