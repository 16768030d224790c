"""Exception types shared across the package."""


class BlockbeamError(Exception):
    """Base class for package-specific errors."""


class FormatError(BlockbeamError, ValueError):
    """Malformed file contents (WAV header, weight-file schema)."""


class UnsupportedEncodingError(FormatError):
    """Well-formed file using an encoding outside the supported set."""


class DataError(BlockbeamError, ValueError):
    """Numerically invalid data (non-finite samples, zero-energy stems)."""


class SizeError(BlockbeamError, ValueError):
    """Shape or length precondition violated."""


class ConfigError(BlockbeamError, ValueError):
    """Invalid or inconsistent configuration."""
