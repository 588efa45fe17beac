"""Exception hierarchy shared across the package."""


class GlemimlError(Exception):
    """Base class for all package errors."""


class ConfigError(GlemimlError):
    """Invalid configuration value or combination."""


class DataFormatError(GlemimlError):
    """Malformed or dimensionally inconsistent dataset content."""


class ShapeError(GlemimlError):
    """Array shapes incompatible with the requested operation."""


class NumericError(GlemimlError):
    """Non-finite values where finite ones are required."""


class DegenerateInputError(GlemimlError):
    """Input is valid but leaves the operation undefined (e.g. no eligible bags)."""
