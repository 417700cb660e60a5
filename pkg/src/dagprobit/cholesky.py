"""Modified Cholesky factorisation and DAG-conditional Gaussian quantities.

A precision matrix is written ``Omega = L D^{-1} L'`` with ``L`` unit
triangular and ``D`` a positive diagonal of conditional variances. Column
``j`` of ``L`` holds the structural coefficients of node ``j``::

    X_j = -sum_{i in pa(j)} L[i, j] X_i + eps_j,   eps_j ~ N(0, D[j])

so that ``L[i, j] != 0`` exactly when ``i -> j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import DecompositionError, IngestionError, NumericError, ValidationError
from .graph import Dag

__all__ = [
    "CholeskyFactors",
    "ConditionalParams",
    "modified_cholesky",
    "reconstruct_precision",
    "conditional_params",
    "partial_correlations",
    "initial_dag_estimate",
]


@dataclass(frozen=True)
class CholeskyFactors:
    """Unit-diagonal coefficient matrix ``L`` and conditional variances ``D``."""

    L: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        D = np.asarray(self.D, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or D.shape != (L.shape[0],):
            raise ValidationError("L must be q x q and D of length q")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "D", D)

    @property
    def q(self) -> int:
        return self.L.shape[0]

    def precision(self) -> np.ndarray:
        return reconstruct_precision(self.L, self.D)

    def covariance(self) -> np.ndarray:
        """``Sigma = L'^{-1} D L^{-1}``, formed without inverting ``Omega``."""
        linv = np.linalg.inv(self.L)
        return (linv.T * self.D) @ linv

    def check(self, dag: Dag | None = None, atol: float = 0.0) -> None:
        """Raise ``ValidationError`` if an invariant is violated."""
        if not np.all(np.diag(self.L) == 1.0):
            raise ValidationError("L must have a unit diagonal")
        if not np.all(self.D > 0):
            raise ValidationError("D must be positive")
        if dag is not None:
            off = ~dag.adj
            np.fill_diagonal(off, False)
            if np.any(np.abs(self.L[off]) > atol):
                raise ValidationError("L has a nonzero entry outside the edge set")


@dataclass(frozen=True)
class ConditionalParams:
    """Regression of a node on its parents; mean is ``-coefficients @ x_pa``."""

    coefficients: np.ndarray
    residual_variance: float


def _chol_lower(a: np.ndarray) -> np.ndarray:
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise DecompositionError(
            f"matrix is not positive definite (leading minor {info} fails)", pivot=info - 1)
    if info < 0:
        raise DecompositionError(f"invalid argument to dpotrf ({info})")
    return c


def modified_cholesky(omega) -> CholeskyFactors:
    """Factor an SPD matrix as ``L D^{-1} L'`` with ``L`` unit lower triangular.

    Parameters
    ----------
    omega : (q, q) array_like
        Symmetric positive definite matrix.

    Returns
    -------
    CholeskyFactors

    Raises
    ------
    DecompositionError
        If ``omega`` is not symmetric or not positive definite; ``pivot`` holds
        the 0-based index of the failing pivot when known.

    Examples
    --------
    >>> f = modified_cholesky(np.array([[2.0, 1.0], [1.0, 1.0]]))
    >>> f.L, f.D
    (array([[1. , 0. ],
           [0.5, 1. ]]), array([0.5, 2. ]))
    """
    om = np.asarray(omega, dtype=float)
    if om.ndim != 2 or om.shape[0] != om.shape[1]:
        raise DecompositionError(f"expected a square matrix, got shape {om.shape}")
    scale = max(np.max(np.abs(om)), np.finfo(float).tiny)
    if np.max(np.abs(om - om.T)) > 1e-10 * scale:
        raise DecompositionError("matrix is not symmetric")
    c = _chol_lower(om)
    dc = np.diag(c)
    L = c / dc
    return CholeskyFactors(L, 1.0 / dc**2)


def reconstruct_precision(L, D) -> np.ndarray:
    """``Omega = L D^{-1} L'``."""
    L = np.asarray(L, dtype=float)
    return (L / np.asarray(D, dtype=float)) @ L.T


def conditional_params(sigma, j: int, pa) -> ConditionalParams:
    """Regression of node ``j`` on ``pa`` under covariance ``sigma``.

    Raises
    ------
    NumericError
        If the parent block of ``sigma`` is singular.
    """
    s = np.asarray(sigma, dtype=float)
    pa = np.asarray(pa, dtype=int).ravel()
    if j in pa:
        raise ValidationError("a node cannot be its own parent")
    if pa.size == 0:
        return ConditionalParams(np.empty(0), float(s[j, j]))
    try:
        c = _chol_lower(s[np.ix_(pa, pa)])
    except DecompositionError as exc:
        raise NumericError(f"parent covariance block is singular: {exc}") from exc
    z = solve_triangular(c, s[pa, j], lower=True)
    beta = solve_triangular(c.T, z, lower=False)
    resid = float(s[j, j] - z @ z)
    if resid <= 0:
        raise NumericError("non-positive residual variance")
    return ConditionalParams(-beta, resid)


def partial_correlations(omega) -> np.ndarray:
    """``rho_ij = -omega_ij / sqrt(omega_ii omega_jj)`` with unit diagonal."""
    om = np.asarray(omega, dtype=float)
    d = np.diag(om)
    if np.any(d <= 0):
        raise NumericError("precision matrix has a non-positive diagonal entry")
    s = 1.0 / np.sqrt(d)
    rho = -om * s[:, None] * s[None, :]
    rho = 0.5 * (rho + rho.T)
    np.fill_diagonal(rho, 1.0)
    return rho


def initial_dag_estimate(x_minus1, zero_tol: float = 0.1, center: bool = True) -> Dag:
    """Starting DAG from the factorised inverse sample covariance of the covariates.

    Parameters
    ----------
    x_minus1 : (n, q-1) array_like
        Observed covariates, columns ordered as nodes ``1..q-1``.
    zero_tol : float
        Coefficients with magnitude at or below this are treated as absent.
    center : bool
        Column-center before forming the covariance.

    Returns
    -------
    Dag
        DAG on ``q`` nodes; node 0 is isolated.

    Raises
    ------
    IngestionError
        If there are too few rows or the sample covariance is singular.
    """
    x = np.asarray(x_minus1, dtype=float)
    if x.ndim != 2:
        raise IngestionError("covariate matrix must be two dimensional")
    n, p = x.shape
    q = p + 1
    if n <= p:
        raise IngestionError(
            f"need more rows than covariates to estimate a precision matrix (n={n}, q-1={p})")
    if center:
        x = x - x.mean(axis=0)
    cov = x.T @ x / n
    try:
        _chol_lower(cov)
        omega = np.linalg.inv(cov)
        f = modified_cholesky(0.5 * (omega + omega.T))
    except (DecompositionError, np.linalg.LinAlgError) as exc:
        raise IngestionError(
            "sample covariance of the covariates is singular; "
            "remove collinear columns or regularise the data") from exc
    adj = np.zeros((q, q), dtype=bool)
    adj[1:, 1:] = np.abs(np.tril(f.L, k=-1)) > zero_tol
    return Dag(adj)
