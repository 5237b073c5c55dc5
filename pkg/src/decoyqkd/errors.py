"""Exception hierarchy shared across the package."""


class DecoyQKDError(Exception):
    """Base class for all package errors."""


class DomainError(DecoyQKDError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigurationError(DecoyQKDError, ValueError):
    """A protocol or experiment configuration violates an invariant."""


class EstimationError(DecoyQKDError):
    """A decoy-state estimate cannot be formed from the available statistics."""
