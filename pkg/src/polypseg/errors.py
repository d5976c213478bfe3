"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in cli.py: ConfigError -> 2,
NumericError -> 3, OSError -> 4.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A hyperparameter, flag, or config-file entry is invalid."""


class NumericError(RuntimeError):
    """A non-finite value was produced where a finite one is required."""
