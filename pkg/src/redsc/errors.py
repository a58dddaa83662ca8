"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration/contract and
file-format problems exit with 2, numerical divergence exits with 3.
"""


class RedscError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(RedscError):
    """Invalid configuration, incompatible shapes, or misuse of an API contract."""


class FormatError(RedscError):
    """Malformed external file (IDX, PGM, checkpoint, config JSON)."""


class DivergenceError(RedscError):
    """Non-finite or exploding numerics during optimization or checking."""
