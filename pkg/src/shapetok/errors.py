"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad schema, unknown keys, or out-of-range values."""


class SpecificationError(ValueError):
    """Invalid shape specification (unknown family, wrong param arity, range)."""


class CheckpointError(RuntimeError):
    """Checkpoint container is corrupt or inconsistent with the active config."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during training or sampling."""
