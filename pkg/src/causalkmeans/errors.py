"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (config 2, data 3, fit 4); library code
raises them directly.
"""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class FitError(RuntimeError):
    """Numerical fitting failure."""


class DegenerateFitError(FitError):
    """Too few observations or a singular design for the requested fit."""


class InitError(FitError):
    """Cluster initialization cannot proceed (e.g. fewer distinct points than k)."""


class OptimizationError(FitError):
    """Optimizer received degenerate input or could not produce an iterate."""
