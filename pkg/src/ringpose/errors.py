"""Exception hierarchy shared by all pipeline stages."""


class RingPoseError(Exception):
    """Base class for every domain error raised by this package."""


class ParameterError(RingPoseError, ValueError):
    """A parameter lies outside its valid domain."""


class EmptyInputError(RingPoseError, ValueError):
    """An operation received fewer items than it needs."""


class GeometryError(RingPoseError, ValueError):
    """A hand pose is geometrically degenerate for the requested transform."""


class SequencingError(RingPoseError, ValueError):
    """Frames arrived out of order or with gaps where order is required."""


class SyncError(RingPoseError, ValueError):
    """Sensor and ground-truth clocks do not overlap."""


class StateError(RingPoseError, RuntimeError):
    """An object was used before it was ready (e.g. an unfitted model)."""


class ParseError(RingPoseError, ValueError):
    """A text record could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FramingError(RingPoseError, ValueError):
    """Packet sync bytes are missing or wrong."""


class IntegrityError(RingPoseError, ValueError):
    """A checksum did not match its payload."""


class TruncationError(RingPoseError, ValueError):
    """A buffer or file ended before a complete record."""


class BadMagicError(RingPoseError, ValueError):
    """Container file does not start with the expected magic bytes."""


class VersionMismatchError(RingPoseError, ValueError):
    """Container file declares a format version this reader cannot handle."""


class ChecksumError(IntegrityError):
    """A dataset record failed its CRC32 check."""
