"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument or precondition violation (maps to CLI exit 2)."""


class ConfigError(ParameterError):
    """Malformed or inconsistent run configuration."""


class NumericError(RuntimeError):
    """Numerical failure: NaN iterates, non-convergent scalar solves (CLI exit 4)."""
