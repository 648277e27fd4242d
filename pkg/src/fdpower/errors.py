"""Exception types shared across the package."""


class FdpowerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FdpowerError):
    """Invalid experiment or run configuration."""


class DomainError(FdpowerError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(FdpowerError, ValueError):
    """Array dimensions inconsistent with the declared layer/graph sizes."""


class DatasetFormatError(FdpowerError):
    """Malformed dataset file; carries the offending record index."""

    def __init__(self, record: int, message: str):
        self.record = record
        super().__init__(f"record {record}: {message}")


class CheckpointError(FdpowerError):
    """Unreadable or version-incompatible parameter checkpoint."""


class NumericsError(FdpowerError):
    """Non-finite value encountered inside an iterative solver or optimizer."""


class TrainingDivergedError(FdpowerError):
    """Training loss became non-finite; carries epoch/step diagnostics."""

    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, step {step}"
        )


class ThresholdUnreachableError(FdpowerError):
    """No listed truncation threshold reaches the requested performance target."""
