"""Exception types shared across the package."""


class BlsacdError(Exception):
    """Base class for package-specific errors."""


class DataError(BlsacdError):
    """Malformed or inconsistent input data (bad schema, bad values)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(BlsacdError):
    """A numerical routine failed to reach its accuracy target."""


class DivergenceError(NumericError):
    """A median recursion overflowed; ``t`` is the offending index."""

    def __init__(self, t, message=None):
        super().__init__(message or f"median recursion diverged at t={t}")
        self.t = t


class SingularHessianError(NumericError):
    """Observed information is not positive definite at the optimum."""

    def __init__(self, eigenvalues):
        super().__init__(
            "observed information matrix is not positive definite; "
            f"eigenvalues of -H: {list(eigenvalues)}"
        )
        self.eigenvalues = eigenvalues
