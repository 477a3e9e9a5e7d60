"""Exception hierarchy shared across the package."""


class StaaError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(StaaError):
    """A clip spec, config, or parameter violates its preconditions."""


class FormatError(StaaError):
    """A file or wire payload does not match the expected layout."""


class ConfigError(StaaError):
    """A model or run configuration is inconsistent."""


class ShapeError(StaaError):
    """Input dimensions incompatible with the model's patch grid."""


class AttributionInputError(StaaError):
    """Model output lacks the attention tensors attribution needs."""


class DegenerateInputError(StaaError):
    """An operation received input on which it is mathematically undefined."""


class ProtocolError(StaaError):
    """Wire message violates the framing protocol."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
