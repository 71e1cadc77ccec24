"""Exception types shared across the package."""


class DivkernError(Exception):
    """Base class for all package errors."""


class ModelError(DivkernError):
    """Invalid model definition or evaluation (bad dimensions, sigma <= 0, ...)."""


class UnknownModelError(ModelError):
    """Requested model family is not registered."""


class ConfigError(DivkernError):
    """Invalid run configuration or config file. CLI exit code 2."""


class NumericsError(DivkernError):
    """Numerical failure: blow-up budget exceeded, singular step Jacobian,
    non-convergent quadrature, non-finite gradient. CLI exit code 3."""
