"""Exception hierarchy shared across the package."""


class ImputeError(Exception):
    """Base class for every error raised by chainimpute."""


class InvalidArgument(ImputeError, ValueError):
    pass


class ParseError(ImputeError, ValueError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class NumericDomainError(ImputeError, ArithmeticError):
    pass


class SingularDesignError(NumericDomainError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(NumericDomainError):
    pass


class InvalidSpec(ImputeError, ValueError):
    pass


class InitializationError(ImputeError):
    pass


class EstimationError(ImputeError):
    pass


class ChainError(ImputeError):
    """A sweep failed; carries enough context to locate the failure."""

    def __init__(self, message, iteration=None, variable=None, chain=None):
        super().__init__(message)
        self.iteration = iteration
        self.variable = variable
        self.chain = chain
