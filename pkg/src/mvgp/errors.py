"""Exception hierarchy used across the package."""


class MVGPError(Exception):
    """Base class for all package errors."""


class DomainError(MVGPError, ValueError):
    """A parameter or observation lies outside its valid domain."""


class ShapeError(MVGPError, ValueError):
    """Array dimensions do not match what an operation expects."""


class SizeError(MVGPError, MemoryError):
    """A dense matrix would exceed the configured size cap."""


class ConvergenceError(MVGPError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, grad_norm=None, n_iter=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.n_iter = n_iter


class ApproximationError(MVGPError, RuntimeError):
    """A fitted approximation failed its certified accuracy gate."""


class ConfigError(MVGPError, ValueError):
    """Invalid model configuration."""


class SchemaError(MVGPError, ValueError):
    """Input file or parameter vector does not follow the expected schema."""


class FoldError(MVGPError, ValueError):
    """Cross-validation fold configuration is unusable."""
