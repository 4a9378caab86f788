"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration (bad shapes, out-of-range parameters)."""


class InputError(ValueError):
    """Invalid runtime input (shape mismatch, non-finite data, unknown task)."""


class StateError(RuntimeError):
    """Operation called in the wrong state (untrained model, missing stats)."""
