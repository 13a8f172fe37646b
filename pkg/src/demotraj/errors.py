"""Exception hierarchy shared by all modules.

Every error raised on bad input derives from :class:`DemoTrajError`.  The
two intermediate classes decide the CLI exit code: :class:`DataError`
(exit 2) for malformed or insufficient input, :class:`NumericalError`
(exit 3) for degenerate geometry.
"""

from __future__ import annotations


class DemoTrajError(Exception):
    exit_code = 2


class DataError(DemoTrajError, ValueError):
    exit_code = 2


class NumericalError(DemoTrajError, ArithmeticError):
    exit_code = 3


class FormatError(DataError):
    """Container or text input does not follow its declared layout."""


class TruncationError(FormatError):
    def __init__(self, message: str, offset: int, channel: int | None = None):
        super().__init__(message)
        self.offset = offset
        self.channel = channel


class ParseError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class DomainError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class PreconditionError(DataError):
    pass


class ConfigurationError(DataError):
    pass


class TopologyError(DataError):
    pass


class UnsupportedTopologyError(TopologyError):
    pass


class UnsupportedJointError(DataError):
    pass


class ValidationError(DataError):
    pass


class SingularityError(NumericalError):
    pass


class DegenerateMotionError(NumericalError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class BehindCameraError(NumericalError):
    pass
