"""Exception types shared across the package.

The CLI maps these onto its exit codes (config error -> 2, data error -> 3,
training divergence -> 4).
"""


class VidsumError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(VidsumError):
    """Invalid or inconsistent configuration (names the offending key)."""


class DataError(VidsumError):
    """Malformed dataset container, split file, or record validation failure."""


class TrainingDivergence(VidsumError):
    """Training produced a non-finite loss or activation."""
