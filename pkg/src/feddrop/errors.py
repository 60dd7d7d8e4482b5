"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (dimension, rate, seed, unknown key, ...)."""


class ShapeError(ValueError):
    """Arrays or parameter trees are not shape-congruent."""


class DataError(ValueError):
    """Malformed data: labels out of range, corrupt files, bad checkpoints."""


class MappingError(ValueError):
    """A dropout mapping does not fit the model it is applied to."""


class RoundError(RuntimeError):
    """A federated round cannot produce an update (e.g. every client skipped)."""
