"""Exception types shared across the package."""


class StructpenError(Exception):
    """Base class for all structpen errors."""

    exit_code = 1


class ConfigError(StructpenError):
    """Invalid input data, shapes, options or files (CLI exit code 2)."""

    exit_code = 2


class NumericalError(StructpenError):
    """A numerical routine failed beyond recovery (CLI exit code 3)."""

    exit_code = 3
