"""Exception hierarchy.

Validation problems (bad input, bad hyperparameters, invalid operators) derive
from :class:`ValidationError`; numerical breakdowns derive from
:class:`NumericError`. The CLI maps these onto exit codes 2 and 3.
"""


class DagProbitError(Exception):
    """Base class for all package errors."""


class ValidationError(DagProbitError, ValueError):
    """Input violates a documented precondition."""


class NumericError(DagProbitError, ArithmeticError):
    """A computation failed for numerical reasons."""


class CycleError(ValidationError):
    """An adjacency matrix or an operator application produced a cycle."""


class OperatorError(ValidationError):
    """A proposal operator is not applicable to the given DAG."""


class HyperparameterError(ValidationError):
    pass


class IngestionError(ValidationError):
    """Input data cannot be used as given (shape, schema, rank)."""


class MetricError(ValidationError):
    pass


class DecompositionError(NumericError):
    """Matrix is not symmetric positive definite."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ProposalError(NumericError):
    """No valid proposal operator exists for the current state."""
