"""Exception types shared across the package."""


class GlassDepthError(Exception):
    """Base class for all package errors."""


class ShapeError(GlassDepthError, ValueError):
    """Operands have incompatible or invalid extents."""


class ContractError(GlassDepthError, RuntimeError):
    """A documented precondition was violated at runtime."""


class ConfigError(GlassDepthError, ValueError):
    """Invalid model / training / CLI configuration."""


class FormatError(GlassDepthError, ValueError):
    """A file on disk does not match its expected binary or text layout."""
