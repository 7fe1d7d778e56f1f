"""Exception hierarchy shared across the package.

Every error raised on purpose by this package derives from ProxylabError,
so callers (and the command line driver) can map failures to exit codes
without string matching.
"""


class ProxylabError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ConfigError(ProxylabError):
    """Invalid configuration value, unknown key, or inconsistent settings."""


class ShapeError(ProxylabError):
    """Tensor or array shapes incompatible with the requested operation."""


class DomainError(ProxylabError):
    """Input outside an op's numeric domain (log of non-positive, overflow)."""


class ContractError(ProxylabError):
    """API misuse: wrong arity, non-scalar backward root, bad op kind."""


class DataError(ProxylabError):
    """Malformed dataset content: bad labels, non-finite values, size mismatch."""


class FormatError(ProxylabError):
    """Corrupt or truncated serialized artifact."""


class UnsupportedVersionError(FormatError):
    """Serialized artifact has a version this code does not read."""


class NumericalError(ProxylabError):
    """Non-finite value produced where the computation requires finite ones."""
