"""Exception types shared across the package."""


class TtaCopeError(Exception):
    """Base class for all package errors."""


class DegenerateInput(TtaCopeError):
    """Point configuration does not determine a similarity transform."""


class SizeMismatch(TtaCopeError, ValueError):
    pass


class ShapeMismatch(TtaCopeError, ValueError):
    pass


class EmptyMask(TtaCopeError):
    """A mask selected zero points where at least one is required."""


class TooFewPoints(TtaCopeError):
    pass


class UnknownMethod(TtaCopeError, ValueError):
    pass


class EmptyInput(TtaCopeError, ValueError):
    pass


class ConfigError(TtaCopeError, ValueError):
    """Invalid or unparsable experiment configuration."""


class StreamFormatError(TtaCopeError, ValueError):
    """A stream file is truncated, corrupt or of an unknown version."""
