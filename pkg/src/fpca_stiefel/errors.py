"""Exception hierarchy shared across the package."""


class FpcaError(Exception):
    """Base class for all package errors."""


class DimensionError(FpcaError, ValueError):
    pass


class BaseMismatchError(FpcaError, ValueError):
    pass


class NotSkewError(FpcaError, ValueError):
    pass


class NotOnManifoldError(FpcaError, ValueError):
    pass


class SingularSystemError(FpcaError, ArithmeticError):
    """Raised when the reduced Newton system is numerically singular."""


class InvalidBasisError(FpcaError, ValueError):
    pass


class DomainError(FpcaError, ValueError):
    pass


class IndefiniteError(FpcaError, ArithmeticError):
    pass


class PreconditionError(FpcaError, ValueError):
    pass


class NoModelError(FpcaError, RuntimeError):
    """No cell of a model-selection grid produced a usable fit."""


class EmptyError(FpcaError, ValueError):
    pass


class InsufficientDataError(FpcaError, ValueError):
    pass


class ParseError(FpcaError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
