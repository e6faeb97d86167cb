"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation (e.g. non-SPD matrix)."""


class ShapeError(ValueError):
    """Dimension mismatch between operands."""


class DegeneracyError(RuntimeError):
    """A covariance (or its factor) lost positive definiteness during iteration."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget without meeting its tolerance."""


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 2."""
