"""Exception hierarchy shared across the package."""


class StLoraError(Exception):
    """Base class for all package errors."""


class DimensionError(StLoraError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(StLoraError, ValueError):
    """An argument is outside its allowed domain."""


class TapeStateError(StLoraError, RuntimeError):
    """The differentiation tape was used in an invalid state."""


class NumericError(StLoraError, ArithmeticError):
    """A NaN or infinity appeared where a finite number was required."""


class ConfigError(StLoraError, ValueError):
    """A model or experiment configuration is inconsistent."""


class DataFormatError(StLoraError, ValueError):
    """A dataset or checkpoint file has a bad header."""


class DataLengthError(DataFormatError):
    """A dataset or checkpoint payload is truncated or has trailing bytes."""


class CheckpointError(StLoraError, ValueError):
    """A checkpoint record does not fit the receiving model."""


class DivergenceError(StLoraError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"loss became non-finite during epoch {epoch}")
