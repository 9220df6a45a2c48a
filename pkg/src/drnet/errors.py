"""Exception hierarchy shared by every drnet module."""


class DRNetError(Exception):
    """Base class for all errors raised by drnet."""


class ShapeError(DRNetError, ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ParameterError(DRNetError, ValueError):
    """An operation argument is outside its supported set."""


class DegenerateStatisticsError(DRNetError, ValueError):
    """Batch statistics are undefined (a single element per channel)."""


class ContractError(DRNetError, RuntimeError):
    """A calling-convention precondition was violated."""


class FormatError(DRNetError, ValueError):
    """A file does not conform to its binary format."""


class HeaderError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class MaxvalError(FormatError):
    pass


class ConfigError(DRNetError, ValueError):
    """A run configuration failed validation.

    The message is path-qualified, e.g. ``decoder.correction_kernel: must be 1, 3, or 5``.
    """


class CheckpointError(DRNetError):
    pass


class ConfigMismatchError(CheckpointError):
    pass
