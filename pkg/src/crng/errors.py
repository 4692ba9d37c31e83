"""Exception types raised by the library."""


class CrngError(Exception):
    """Base class for all library errors."""


class PastDeadline(CrngError):
    """A delayed TX was scheduled for a local time that already elapsed."""


class NoDetectablePath(CrngError):
    """No CIR sample cleared the leading-edge detection threshold."""


class TrimRangeExceeded(CrngError):
    """A trim adjustment would push the trim index outside [0, 31]."""


class RearrangeFailed(CrngError):
    """No sample above the re-arrangement threshold outside the noise window."""


class InvalidToa(CrngError):
    """A ToA estimate marked invalid was used where a valid one is required."""


class InsufficientSamples(CrngError):
    """Too few samples for a calibration fit."""


class DegenerateGeometry(CrngError):
    """Anchor geometry leaves the linearized system rank-deficient."""


class AnchorAtEstimate(CrngError):
    """Iterate coincides with an anchor (handled internally, never raised)."""


class ZeroSpeedSegment(CrngError):
    """A trajectory segment of nonzero length has speed <= 0."""


class TooClose(CrngError):
    """Path-loss model evaluated below its minimum distance."""


class ParseError(CrngError):
    """Scenario file syntax error."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(CrngError):
    """A scenario value violates a documented invariant."""


class CorruptRecord(CrngError):
    """A CIR log record failed to deserialize."""

    def __init__(self, message: str, index: int):
        super().__init__(f"record {index}: {message}")
        self.index = index
