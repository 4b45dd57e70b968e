"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is out of range or has an incompatible shape."""


class StateError(RuntimeError):
    """An object was used in a state that does not permit the call."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class ImageFormatError(OSError):
    """A file could not be decoded as a supported image."""
