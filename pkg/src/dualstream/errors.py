"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operands or weights have incompatible shapes."""


class ContractError(ValueError):
    """A call violates an operation's precondition (bad index, non-scalar loss, ...)."""


class ConfigError(ValueError):
    """A configuration value is out of range or unknown."""


class StateError(RuntimeError):
    """An object is used before it reached the required state (e.g. untrained)."""


class TrainingError(RuntimeError):
    """Optimisation diverged; carries step diagnostics in the message."""


class FormatError(ValueError):
    """A checkpoint or file does not follow the expected binary/text format."""


class NumericalError(FloatingPointError):
    """A forward kernel produced NaN or Inf from finite inputs."""
