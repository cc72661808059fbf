"""Exception types shared across the package."""


class LCTError(Exception):
    """Base class for all library errors."""


class DimensionError(LCTError, ValueError):
    """Operand shapes disagree."""


class ArgumentError(LCTError, ValueError):
    """An argument is outside its valid domain."""


class ConfigError(LCTError, ValueError):
    """A model, training or experiment configuration is invalid."""


class StateError(LCTError, RuntimeError):
    """An object was used in a state that does not permit the call."""


class PrecisionError(LCTError, TypeError):
    """A float64 computation was required but a lower precision was given."""


class FormatError(LCTError, ValueError):
    """A file does not follow its binary or JSON format."""


class PartitionError(LCTError, RuntimeError):
    """No valid client partition could be drawn."""


class ProtocolError(LCTError, RuntimeError):
    """The federated protocol was violated (e.g. nothing to aggregate)."""


class NumericError(LCTError, FloatingPointError):
    """A non-finite value appeared where a finite one is required."""
