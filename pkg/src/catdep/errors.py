"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, arguments, or input files."""


class NumericalError(RuntimeError):
    """A numerical routine produced non-finite values or hit a guard."""


class NonConvergenceError(NumericalError):
    """Iterative fit failed to converge; carries the last gradient norm."""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm
