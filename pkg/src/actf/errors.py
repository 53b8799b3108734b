"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of range or internally inconsistent."""


class InputError(ValueError):
    """A runtime input (video, label, ...) violates an operation's precondition."""


class FormatError(ValueError):
    """A serialized file is malformed; the message names the failing byte offset."""
