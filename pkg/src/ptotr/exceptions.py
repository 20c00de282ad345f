"""Exception types raised across the package."""


class PtotrError(Exception):
    """Base class for package errors."""


class DimensionError(PtotrError, ValueError):
    """Operands have incompatible shapes or an index is out of range."""


class CorruptInputError(PtotrError, ValueError):
    """Input violates a structural invariant (e.g. a zero-sum factor column)."""


class DegenerateRateError(PtotrError, ArithmeticError):
    """A Poisson rate is nonpositive where a positive count was observed."""


class MleNotExistError(PtotrError):
    """The maximum likelihood estimate lies on the boundary of the parameter set."""


class TensorFileError(PtotrError, ValueError):
    """Malformed tensor or dataset file."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class ConfigError(PtotrError, ValueError):
    """Invalid run configuration."""
