class ProtocolError(RuntimeError):
    """An operation was called out of order (step after termination, stale cache, empty buffer)."""


class InfeasibleRegionError(RuntimeError):
    """Goal rejection sampling exceeded its cap."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in gradients, losses or parameters."""


class ConfigError(ValueError):
    """An experiment or environment document is malformed or invalid."""
