"""Exception hierarchy shared by every pwoa module."""


class PwoaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PwoaError, ValueError):
    pass


class ParameterError(PwoaError, ValueError):
    pass


class InputError(PwoaError, ValueError):
    pass


class ConfigError(PwoaError, ValueError):
    """Invalid run configuration; ``path`` names the offending key when known."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class EstimatorError(PwoaError, ValueError):
    """HSIC needs at least two samples."""


class NumericError(PwoaError, ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, layer=None):
        self.layer = layer
        super().__init__(message)


class FormatError(PwoaError, ValueError):
    """Malformed file. ``offset`` is a byte offset or ``line`` a line number."""

    def __init__(self, message, offset=None, line=None, section=None):
        self.offset = offset
        self.line = line
        self.section = section
        super().__init__(message)


class IntegrityError(FormatError):
    pass
