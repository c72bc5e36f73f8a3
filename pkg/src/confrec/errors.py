"""Exception types raised across the package."""


class ConfRecError(Exception):
    """Base class for all package errors."""


class InputError(ConfRecError):
    """Bad or unusable input data (CLI exit code 1)."""


class NumericalError(ConfRecError):
    """Numerical failure during training (CLI exit code 2)."""


class IndexOutOfRange(InputError, IndexError):
    pass


class EmptyGraph(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, line_number=None, path=None):
        self.line_number = line_number
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_number is not None:
            where += f"{line_number}:"
        super().__init__(f"{where} {message}" if where else message)


class EmptyFile(InputError):
    pass


class DimensionMismatch(InputError, ValueError):
    pass


class LengthMismatch(InputError, ValueError):
    pass


class AllExcluded(InputError):
    pass


class AllMasked(InputError):
    pass


class NoUsers(InputError):
    pass


class NoNegativesAvailable(InputError):
    pass


class ChecksumMismatch(InputError):
    pass


class DivergenceDetected(NumericalError):
    pass
