"""Exception types shared across the package.

The split matters for the command-line driver, which maps these onto
distinct process exit codes.
"""


class ValidationError(ValueError):
    """Bad user input: config, data files, dimensions, domains."""


class SpdError(ValidationError):
    """A matrix required to be symmetric positive definite is not."""


class NumericalError(RuntimeError):
    """A numerical operation failed beyond recovery (e.g. a filter
    covariance lost positive definiteness)."""


class PartialChainError(RuntimeError):
    """Some, but not all, chains of a multi-chain run failed."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or {}
