"""Exception hierarchy shared by the library and the CLI."""

from typing import Optional


class CXRNetError(Exception):
    """Base class for all errors raised by cxr_net."""

    exit_code = 3


class ConfigError(CXRNetError):
    """Invalid or unknown configuration value."""

    exit_code = 2


class ParameterError(CXRNetError):
    """A numeric parameter is outside its documented range."""

    exit_code = 2


class ShapeError(CXRNetError):
    """Tensor shapes are empty or do not agree."""


class ValidationError(CXRNetError):
    """Input values violate an operation's precondition."""


class FoldBalanceError(ValidationError):
    """A validation fold's positive count is more than one sample off the global ratio."""


class TopologyError(CXRNetError):
    """Model graphs that should be identical are not."""


class PoolingError(CXRNetError):
    """The pooling include map selects no position."""

    def __init__(self, message: str = "empty pooling region"):
        super().__init__(message)


class FormatError(CXRNetError):
    """A file does not follow its binary or text format."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.detail = message
        if offset is not None:
            message = f"format error at byte {offset}: {message}"
        else:
            message = f"format error: {message}"
        super().__init__(message)
        self.offset = offset


class IntegrityError(FormatError):
    """A checksum does not match its section."""


class NumericalError(CXRNetError):
    """A loss or gradient became NaN or infinite."""

    exit_code = 4
