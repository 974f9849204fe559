"""Exception hierarchy shared across the pipeline stages."""


class VulngraphError(Exception):
    """Base class for every error raised by this package."""


class FeedParseError(VulngraphError):
    """Raised when a vulnerability feed cannot be decoded at all.

    Carries the byte offset of the first unreadable position when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(VulngraphError):
    """Input data violates the documented schema or preconditions."""


class SplitError(DataError):
    """Dataset too small to be split into populate/train/test parts."""


class ParameterError(VulngraphError, ValueError):
    """An operation was called with out-of-range parameters."""


class EmptySeedError(VulngraphError):
    """None of the prediction input's libraries exist in the graph."""


class TrainingError(VulngraphError):
    """Training was requested with no usable training cases."""


class MissingStageError(VulngraphError):
    """A pipeline stage artifact is absent from the store.

    ``required_command`` names the CLI command that produces it.
    """

    def __init__(self, message, required_command=None):
        if required_command is not None:
            message = f"{message}; run `vulngraph {required_command}` first"
        super().__init__(message)
        self.required_command = required_command


class StoreLockedError(VulngraphError):
    """Another process holds the store's writer lock."""
