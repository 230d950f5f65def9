"""Exception types shared across the package."""


class SelfLearnError(Exception):
    """Base class for all package errors."""


class ShapeError(SelfLearnError, ValueError):
    pass


class NumericError(SelfLearnError, ArithmeticError):
    """A value became NaN/Inf, or an operation hit a degenerate input."""


class TapeUsageError(SelfLearnError, RuntimeError):
    pass


class ConfigError(SelfLearnError, ValueError):
    pass


class TransferIncompatibleError(SelfLearnError, ValueError):
    """Checkpoint parameters do not fit the requested encoder."""


class MiningError(SelfLearnError, RuntimeError):
    pass


class IdxFormatError(SelfLearnError, ValueError):
    """Malformed IDX file. ``field`` names the offending header/data field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointFormatError(SelfLearnError, ValueError):
    pass


class MiningWarning(UserWarning):
    """A batch could not produce the requested triplets or pairs."""
