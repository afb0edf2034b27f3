"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class NotFound(FileNotFoundError):
    pass


class DecodeError(ValueError):
    pass


class ImageWriteError(OSError):
    pass


class StateError(RuntimeError):
    """An object was used before it was ready (e.g. extractor without weights)."""


class TrainingDiverged(RuntimeError):
    """A loss became non-finite. The offending :class:`LossBundle` is kept on ``.bundle``."""

    def __init__(self, message, bundle=None):
        super().__init__(message)
        self.bundle = bundle


class CheckpointError(RuntimeError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class DegeneratePartition(ValueError):
    """A region mask came out empty for the requested threshold."""
