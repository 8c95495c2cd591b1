"""Exception hierarchy shared by every module."""


class SparseScaleError(Exception):
    """Base class for all package errors."""


class InfeasibleError(SparseScaleError, ValueError):
    """A budget, schedule or target cannot be satisfied.

    ``constraint`` names the binding constraint so callers (and the CLI) can
    report it without parsing the message.
    """

    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


class IllPosedError(SparseScaleError, ValueError):
    """The data cannot identify the requested model."""


class ConvergenceError(SparseScaleError, RuntimeError):
    """No optimizer start converged; ``best`` holds the best partial result."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SingularityError(SparseScaleError, ValueError):
    """Evaluation at zero cumulative compute, where the power law diverges."""


class SchemaError(SparseScaleError, ValueError):
    """Tabular input is missing a required column or has no rows."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column
