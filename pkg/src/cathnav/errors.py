"""Exception types shared across the simulator."""


class LayoutError(ValueError):
    """Vector or joint layout does not match the chain specification."""


class NumericError(ValueError):
    """Non-finite or otherwise invalid numerical input."""


class GeometryError(ValueError):
    """Invalid or self-contradictory geometry parameters."""


class ManifestError(ValueError):
    """Hull-set manifest is missing data or references bad geometry."""


class ConfigError(ValueError):
    """Invalid run or environment configuration."""


class UsageError(RuntimeError):
    """API called outside its legal lifecycle (e.g. step before reset)."""


class IntegrationDivergedError(RuntimeError):
    """Integrator produced non-finite state; the episode must be truncated."""
