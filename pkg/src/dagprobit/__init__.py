"""Bayesian structure learning and causal effects for two-group Gaussian DAG-probit models."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CycleError, DagProbitError, DecompositionError, HyperparameterError, IngestionError,
    MetricError, NumericError, OperatorError, ProposalError, ValidationError,
)
from .graph import Dag, OpKind, Operator  # noqa: F401
from .cholesky import CholeskyFactors, modified_cholesky  # noqa: F401
from .model import GroupData, Hyperparams  # noqa: F401
from .mcmc import ChainTrace, edge_probabilities, run_chain  # noqa: F401
