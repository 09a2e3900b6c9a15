"""Exception types shared across the package."""


class DppnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DppnetError):
    """Tensor shapes incompatible with an operation's contract."""


class ConfigError(DppnetError):
    """Invalid or inconsistent configuration."""


class DataFormatError(DppnetError):
    """Malformed dataset, prediction, or interchange file."""


class TaxonomyError(DppnetError):
    """Malformed taxonomy file."""


class CheckpointError(DppnetError):
    """Missing, truncated, or inconsistent checkpoint."""
