"""Exception hierarchy shared by all turbcast modules."""


class TurbcastError(Exception):
    """Base class for all turbcast-specific errors."""


class ValidationError(TurbcastError):
    """Input data violates a value-level contract (bad class code, negative probability, ...)."""


class DegenerateInputError(ValidationError):
    """Input is structurally valid but mathematically degenerate (e.g. all-zero distribution)."""


class GeometryError(ValidationError):
    """Grid too small for the requested stencil or inconsistent level geometry."""


class ShapeError(ValidationError):
    """Tensor shapes are inconsistent with each other or with the configured region."""


class ConfigurationError(TurbcastError):
    """Configuration values are out of range or mutually inconsistent."""


class UsageError(TurbcastError):
    """An operation was called on the wrong kind of object or with unusable arguments."""


class NumericalError(TurbcastError):
    """A computation produced non-finite values or otherwise failed numerically."""
