"""Hyperparameters, group data, node statistics and closed-form node marginals.

All node quantities are computed from the Gram matrix ``G = X'X`` of the
augmented data matrix ``X = [x_latent, x_obs]``. Only row/column 0 of ``G``
depends on the latent column, so statistics of nodes ``j >= 1`` stay valid
across latent updates and are memoised by :class:`NodeCache`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import lapack
from scipy.linalg.blas import dtrsv
from scipy.special import gammaln

from .errors import HyperparameterError, IngestionError, NumericError
from .graph import Dag

LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "Hyperparams",
    "GroupData",
    "NodeStats",
    "NodeCache",
    "node_stats",
    "node_stats_gram",
    "log_marginal_node",
    "log_marginal_from_stats",
    "shape_param",
    "sample_sigma_prior",
    "sample_L_prior",
    "sample_inverse_gamma",
]


@dataclass(frozen=True)
class Hyperparams:
    """Model and sampler settings.

    ``a``, ``g1`` and ``g2`` default to ``None`` and are filled in by
    :meth:`resolve` as ``a = q`` and ``g_k = 1 / n_k``.
    """

    a: Optional[float] = None
    g1: Optional[float] = None
    g2: Optional[float] = None
    xi: float = 0.1
    sigma0_sq: float = 0.5
    T: int = 5000
    B: int = 1000
    edge_threshold: float = 0.5
    exact_proposal_ratio: bool = True
    refresh_latent_after_theta: bool = True
    zero_tol: float = 0.1

    def resolve(self, q: int, n1: int, n2: int) -> "Hyperparams":
        """Fill data-dependent defaults and validate against ``q``."""
        h = replace(
            self,
            a=float(q) if self.a is None else float(self.a),
            g1=1.0 / n1 if self.g1 is None else float(self.g1),
            g2=1.0 / n2 if self.g2 is None else float(self.g2),
        )
        h.validate(q)
        return h

    def g(self, k: int) -> float:
        return self.g1 if k == 0 else self.g2

    def validate(self, q: Optional[int] = None) -> None:
        if not (0.0 < self.xi < 1.0):
            raise HyperparameterError(f"xi must lie in (0, 1), got {self.xi}")
        if not self.sigma0_sq > 0:
            raise HyperparameterError("sigma0_sq must be positive")
        for name in ("g1", "g2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise HyperparameterError(f"{name} must be positive")
        if int(self.T) != self.T or int(self.B) != self.B or self.B < 0:
            raise HyperparameterError("T and B must be non-negative integers")
        if not self.B < self.T:
            raise HyperparameterError(f"burn-in B={self.B} must be smaller than T={self.T}")
        if not (0.0 <= self.edge_threshold <= 1.0):
            raise HyperparameterError("edge_threshold must lie in [0, 1]")
        if not self.zero_tol >= 0:
            raise HyperparameterError("zero_tol must be non-negative")
        if q is not None and self.a is not None and not self.a > q - 2:
            # a_j = a + |pa| - q + 1 must be positive for the empty parent set
            raise HyperparameterError(f"a must exceed q - 2 = {q - 2}, got {self.a}")


class GroupData:
    """One group's responses, covariates and current latent imputation.

    Parameters
    ----------
    y : (n,) array_like of {0, 1}
    x_obs : (n, q-1) array_like
        Covariates for nodes ``1..q-1``.
    x_latent : (n,) array_like, optional
        Initial latent column; zeros if omitted.

    Notes
    -----
    ``n = 0`` is allowed; every node marginal is then identically 1, which
    turns the structure moves into a sampler of the DAG prior.
    """

    def __init__(self, y, x_obs, x_latent=None):
        y = np.asarray(y)
        x_obs = np.asarray(x_obs, dtype=float)
        if x_obs.ndim == 1:
            x_obs = x_obs[:, None]
        if y.ndim != 1 or x_obs.ndim != 2 or y.shape[0] != x_obs.shape[0]:
            raise IngestionError(
                f"y has shape {y.shape} but covariates have shape {x_obs.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise IngestionError("response y must be binary (0/1)")
        if not np.all(np.isfinite(x_obs)):
            raise IngestionError("covariates contain non-finite values")
        self.y = y.astype(np.int8)
        self.x_obs = x_obs
        n, p = x_obs.shape
        self.X = np.empty((n, p + 1))
        self.X[:, 1:] = x_obs
        self.X[:, 0] = 0.0 if x_latent is None else np.asarray(x_latent, dtype=float)
        self.gram = self.X.T @ self.X
        self.positive = self.y == 1

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def x_latent(self) -> np.ndarray:
        return self.X[:, 0]

    def set_latent(self, z: np.ndarray) -> None:
        """Replace the latent column and refresh row/column 0 of the Gram matrix."""
        self.X[:, 0] = z
        row = self.X.T @ self.X[:, 0]
        self.gram[0, :] = row
        self.gram[:, 0] = row

    def check_latent(self, theta: float) -> bool:
        """True iff ``y == 1`` exactly where the latent exceeds ``theta``."""
        return bool(np.array_equal(self.x_latent > theta, self.positive))

    def copy(self) -> "GroupData":
        return GroupData(self.y.copy(), self.x_obs.copy(), self.x_latent.copy())


@dataclass
class NodeStats:
    """Posterior statistics of node ``j`` given its parents.

    ``t = g I``, ``t_bar = t + X_pa' X_pa`` and ``t_bar @ l_hat = X_pa' X_j``.
    The remaining fields are by-products used by the sampler: ``chol`` is the
    lower Cholesky factor of ``t_bar``, ``z = chol^{-1} X_pa' X_j``,
    ``resid = X_j'X_j - l_hat' t_bar l_hat`` and ``half_logdet`` is
    ``(ln|t| - ln|t_bar|) / 2``.
    """

    pa: np.ndarray
    t: np.ndarray
    t_bar: np.ndarray
    l_hat: np.ndarray
    chol: np.ndarray
    z: np.ndarray
    resid: float
    half_logdet: float

    @property
    def n_parents(self) -> int:
        return self.pa.size


def node_stats_gram(gram: np.ndarray, pa: np.ndarray, j: int, g: float) -> NodeStats:
    """:func:`node_stats` from a precomputed Gram matrix."""
    p = pa.size
    if p == 0:
        e = np.empty((0, 0))
        v = np.empty(0)
        return NodeStats(pa, e, e, v, e, v, float(gram[j, j]), 0.0)
    t_bar = gram[np.ix_(pa, pa)]
    t_bar[np.diag_indices(p)] += g
    c, info = lapack.dpotrf(t_bar, lower=1, clean=1)
    if info != 0:
        raise NumericError(f"t_bar is not positive definite (info={info})")
    b = gram[pa, j]
    z = dtrsv(c, b, lower=1)
    l_hat = dtrsv(c, z, lower=1, trans=1)
    resid = float(gram[j, j] - z @ z)
    half_logdet = 0.5 * p * math.log(g) - float(np.log(np.diag(c)).sum())
    return NodeStats(pa, g * np.eye(p), t_bar, l_hat, c, z, resid, half_logdet)


def node_stats(x_group, dag: Dag, j: int, g: float) -> NodeStats:
    """Statistics of node ``j`` of ``dag`` from a data matrix with the latent in column 0."""
    if not g > 0:
        raise HyperparameterError("g must be positive")
    x = x_group.X if isinstance(x_group, GroupData) else np.asarray(x_group, dtype=float)
    pa = np.flatnonzero(dag.adj[:, j])
    cols = np.concatenate([pa, [j]])
    sub = x[:, cols]
    gram = np.zeros((x.shape[1], x.shape[1]))
    gram[np.ix_(cols, cols)] = sub.T @ sub
    return node_stats_gram(gram, pa, j, g)


def shape_param(a: float, n_parents: int, q: int) -> float:
    """``a_j = a + |pa(j)| - q + 1``."""
    return a + n_parents - q + 1


def log_marginal_from_stats(st: NodeStats, j: int, g: float, a: float, n: int, q: int) -> float:
    """Log marginal likelihood of node ``j`` given precomputed statistics.

    For ``j >= 1`` the conditional variance is integrated out against its
    inverse-gamma prior; node 0 has unit variance.
    """
    base = -0.5 * n * LOG_2PI + st.half_logdet
    if j == 0:
        return base - 0.5 * st.resid
    aj = shape_param(a, st.n_parents, q)
    if not aj > 0:
        raise HyperparameterError(f"shape a_j = {aj} is not positive for node {j}")
    post = 0.5 * (aj + n)
    return (base + gammaln(post) - gammaln(0.5 * aj) + 0.5 * aj * math.log(0.5 * g)
            - post * math.log(0.5 * (g + st.resid)))


def log_marginal_node(x_group, dag: Dag, j: int, g: float, a: float, n: Optional[int] = None) -> float:
    """Closed-form log marginal likelihood ``ln m(X_j | X_pa(j), dag)``.

    Parameters
    ----------
    x_group : GroupData or (n, q) array
        Data with the latent response in column 0.
    dag : Dag
    j : int
        Node index.
    g, a : float
        Prior precision scale and shape base.
    n : int, optional
        Sample size; defaults to the number of rows.

    Raises
    ------
    HyperparameterError
        If ``a_j <= 0`` for ``j >= 1``.
    """
    x = x_group.X if isinstance(x_group, GroupData) else np.asarray(x_group, dtype=float)
    if n is None:
        n = x.shape[0]
    st = node_stats(x, dag, j, g)
    return log_marginal_from_stats(st, j, g, a, n, dag.q)


class NodeCache:
    """Memoised node statistics and marginals of one group.

    Entries for ``j >= 1`` are keyed by ``(j, parent mask)``; node 0 depends
    on the latent column and is recomputed whenever :meth:`invalidate_latent`
    has been called since the last request.
    """

    def __init__(self, data: GroupData, g: float, a: float, maxsize: int = 200_000):
        self.data = data
        self.g = g
        self.a = a
        self.q = data.q
        self.n = data.n
        self.maxsize = maxsize
        self._store: dict = {}
        self._latent: dict = {}

    def invalidate_latent(self) -> None:
        self._latent.clear()

    def get(self, adj: np.ndarray, j: int) -> tuple[NodeStats, float]:
        col = adj[:, j]
        key = (j, col.tobytes())
        store = self._latent if j == 0 else self._store
        hit = store.get(key)
        if hit is None:
            st = node_stats_gram(self.data.gram, np.flatnonzero(col), j, self.g)
            lm = log_marginal_from_stats(st, j, self.g, self.a, self.n, self.q)
            hit = (st, lm)
            if j != 0 and len(store) >= self.maxsize:
                store.clear()
            store[key] = hit
        return hit

    def stats(self, adj: np.ndarray, j: int) -> NodeStats:
        return self.get(adj, j)[0]

    def log_marginal(self, adj: np.ndarray, j: int) -> float:
        return self.get(adj, j)[1]


def sample_inverse_gamma(shape: float, rate: float, rng: np.random.Generator, size=None):
    """Draw from an inverse gamma with density proportional to ``x^{-shape-1} e^{-rate/x}``."""
    if not shape > 0:
        raise HyperparameterError(f"inverse-gamma shape must be positive, got {shape}")
    if not rate > 0:
        raise HyperparameterError(f"inverse-gamma rate must be positive, got {rate}")
    return rate / rng.gamma(shape, 1.0, size=size)


def sample_sigma_prior(dag1: Dag, dag2: Dag, j: int, hyper: Hyperparams,
                       rng: np.random.Generator) -> float:
    """Prior draw of the shared conditional variance of node ``j``.

    Returns 1.0 for the latent node.
    """
    if j == 0:
        return 1.0
    if hyper.a is None or hyper.g1 is None or hyper.g2 is None:
        raise HyperparameterError("hyperparameters must be resolved first")
    q = dag1.q
    a1 = shape_param(hyper.a, int(dag1.adj[:, j].sum()), q)
    a2 = shape_param(hyper.a, int(dag2.adj[:, j].sum()), q)
    return float(sample_inverse_gamma(0.5 * (a1 + a2), 0.5 * (hyper.g1 + hyper.g2), rng))


def sample_L_prior(dag: Dag, j: int, sigma_sq: float, g: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Prior draw of the coefficients into node ``j``: iid ``N(0, sigma_sq / g)``."""
    p = int(dag.adj[:, j].sum())
    return rng.normal(0.0, math.sqrt(sigma_sq / g), size=p)
