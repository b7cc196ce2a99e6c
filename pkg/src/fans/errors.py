"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the families apart:
usage/config problems, malformed data or files, and numeric breakdowns.
"""


class ConfigError(ValueError):
    """Invalid model or training configuration."""


class DataError(ValueError):
    """Malformed corpus content (manifests, grammars, annotations)."""


class FormatError(DataError):
    """Corrupt or unreadable binary file (bad magic, truncation, CRC)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""
