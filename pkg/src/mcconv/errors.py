"""Exception hierarchy shared by every module."""


class MCConvError(Exception):
    """Base class for all library errors."""


class EmptyInput(MCConvError, ValueError):
    pass


class InvalidParameter(MCConvError, ValueError):
    pass


class IndexMismatch(MCConvError, ValueError):
    pass


class NotEstimated(MCConvError, RuntimeError):
    """A neighbor table was used before its pdf values were filled."""


class ShapeMismatch(MCConvError, ValueError):
    pass


class MissingNormals(MCConvError, ValueError):
    pass


class InvalidLabel(MCConvError, ValueError):
    pass


class DatasetNotFound(MCConvError, FileNotFoundError):
    pass


class InputError(MCConvError, ValueError):
    """Wraps an error raised while processing one input of a multi-input op."""

    def __init__(self, index, error):
        self.index = index
        self.error = error
        super().__init__(f"input {index}: {error}")
