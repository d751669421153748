"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented constraint."""


class ParseError(ValueError):
    """A file could not be parsed.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int, optional
        1-based line number where parsing failed.
    path : str, optional
        File being parsed.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class InfeasibleError(ValueError):
    """Calibration pool is too small for the requested miscoverage rate."""


class UnknownPoolError(KeyError):
    """No calibration pool exists for the requested interference degree."""
