"""Exception types shared across the package."""


class RomdotError(Exception):
    """Base class for package errors."""


class ConfigurationError(RomdotError, ValueError):
    """Invalid or inconsistent configuration."""


class SolverError(RomdotError, RuntimeError):
    """A linear solve missed its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FactorizationError(SolverError):
    """The operator could not be factorized (singular or structurally broken)."""


class StructureError(RomdotError):
    """Matrix structure does not match the expected block ordering."""


class DegenerateInputError(RomdotError, ValueError):
    """Input carries no information (e.g. an all-zero candidate basis)."""
