"""Exception types shared across the package."""


class JointraitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(JointraitError):
    """Model/design configuration is internally inconsistent."""


class DataError(JointraitError):
    """Input data violates a documented invariant; message names the field."""


class HazardOverflowError(JointraitError):
    """exp() overflow while integrating a hazard segment.

    Signals a divergent parameter draw; callers reject the draw rather
    than clamping the value.
    """

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment
