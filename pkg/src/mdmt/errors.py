"""Exception types shared across the package."""


class MDMTError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MDMTError, ValueError):
    pass


class ShapeError(MDMTError, ValueError):
    pass


class StateError(MDMTError, RuntimeError):
    pass


class NumericError(MDMTError, ArithmeticError):
    pass


class ParseError(MDMTError, ValueError):
    """Malformed input file. ``source`` names the file, ``line`` is 1-based when known."""

    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where += f"{source}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)
