"""Two-group DAG-probit Gibbs/Metropolis sampler.

One iteration performs, in order:

1. a structure move (Insert / Delete / Reverse) per group, accepted with the
   ratio of closed-form node marginals;
2. a Gibbs draw of the conditional variances shared by both groups;
3. per group, a Gibbs draw of the coefficient matrix ``L`` followed by a
   truncated-normal draw of the latent response column;
4. a random-walk Metropolis step for the cut-off ``theta`` with the latent
   column integrated out;
5. after burn-in, recording of the state and of interventional effects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg.blas import dtrsv
from scipy.special import log_ndtr, ndtri_exp

from .causal import effects_for_state
from .cholesky import CholeskyFactors, initial_dag_estimate, partial_correlations, reconstruct_precision
from .errors import NumericError, ProposalError, ValidationError
from .graph import (
    Dag,
    OpKind,
    Operator,
    _operator_masks,
    apply_operator,
    log_prior_ratio,
    reachability,
)
from .model import GroupData, Hyperparams, NodeCache, NodeStats, shape_param

__all__ = [
    "ChainState",
    "ChainTrace",
    "propose_dag",
    "log_acceptance",
    "accept_dag",
    "shared_sigma_params",
    "update_shared_sigma",
    "update_L",
    "sample_truncated_normal",
    "truncation_bounds",
    "update_latent",
    "latent_mean",
    "log_theta_ratio",
    "update_theta",
    "init_state",
    "run_chain",
    "edge_probabilities",
]

_KINDS = (OpKind.DELETE, OpKind.REVERSE, OpKind.INSERT)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

class ChainState:
    """Mutable sampler state for two groups.

    Attributes
    ----------
    dags : list of Dag
    L : list of (q, q) arrays
        Coefficient matrices; ``L[k][i, j]`` is nonzero only on edges of ``dags[k]``.
    d : (q,) array
        Shared conditional variances with ``d[0] = 1``.
    theta : float
    data : list of GroupData
        Group data; the latent column lives in ``data[k].X[:, 0]``.
    """

    def __init__(self, dags, L, d, theta, data, hyper: Hyperparams):
        self.dags = list(dags)
        self.L = [np.array(l, dtype=float) for l in L]
        self.d = np.array(d, dtype=float)
        self.theta = float(theta)
        self.data = list(data)
        self.hyper = hyper
        self.caches = [NodeCache(self.data[k], hyper.g(k), hyper.a) for k in range(2)]
        self.reach = [reachability(dg.adj) for dg in self.dags]

    @property
    def q(self) -> int:
        return self.dags[0].q

    @property
    def latents(self) -> list[np.ndarray]:
        return [dt.x_latent for dt in self.data]

    def factors(self, k: int) -> CholeskyFactors:
        return CholeskyFactors(self.L[k].copy(), self.d.copy())

    def set_dag(self, k: int, dag: Dag, reach: Optional[np.ndarray] = None) -> None:
        self.dags[k] = dag
        self.reach[k] = reachability(dag.adj) if reach is None else reach

    def set_latent(self, k: int, z: np.ndarray) -> None:
        self.data[k].set_latent(z)
        self.caches[k].invalidate_latent()

    def check(self, it: Optional[int] = None) -> None:
        """Raise ``ValidationError`` if any state invariant is broken."""
        where = "" if it is None else f" at iteration {it}"
        if self.d[0] != 1.0 or not np.all(self.d > 0):
            raise ValidationError(f"conditional variances invalid{where}")
        for k in range(2):
            try:
                self.factors(k).check(self.dags[k])
            except ValidationError as exc:
                raise ValidationError(f"group {k}: {exc}{where}") from exc
            if not self.data[k].check_latent(self.theta):
                raise ValidationError(f"group {k}: latent inconsistent with y{where}")


@dataclass
class ChainTrace:
    """Post burn-in record of a chain.

    Attributes
    ----------
    edges : (R, 2, q, q) bool array
    theta : (R,) array
    L : (R, 2, q, q) array
    D : (R, q) array
    effects : (R, 2, m) array
        ``P(Y = 1 | do(X_s = x_tilde))`` for each of the ``m`` targets.
    targets : (m,) int array
    x_tilde : float
    dag_proposed, dag_accepted : (2,) int arrays
    theta_proposed, theta_accepted : int
    """

    edges: np.ndarray
    theta: np.ndarray
    L: np.ndarray
    D: np.ndarray
    effects: np.ndarray
    targets: np.ndarray
    x_tilde: float
    dag_proposed: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    dag_accepted: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    theta_proposed: int = 0
    theta_accepted: int = 0
    _partials: dict = field(default_factory=dict, repr=False)

    @property
    def n_records(self) -> int:
        return self.theta.shape[0]

    @property
    def q(self) -> int:
        return self.edges.shape[-1]

    def precision(self, t: int, k: int) -> np.ndarray:
        return reconstruct_precision(self.L[t, k], self.D[t])

    def covariance(self, t: int, k: int) -> np.ndarray:
        linv = np.linalg.inv(self.L[t, k])
        return (linv.T * self.D[t]) @ linv

    def partial_correlations(self, k: int) -> np.ndarray:
        """(R, q, q) partial correlations, computed on first access."""
        if k not in self._partials:
            self._partials[k] = np.stack(
                [partial_correlations(self.precision(t, k)) for t in range(self.n_records)])
        return self._partials[k]

    def recorded_effects(self, k: int, s: int, x_tilde: float) -> Optional[np.ndarray]:
        if x_tilde != self.x_tilde:
            return None
        hit = np.flatnonzero(self.targets == s)
        if hit.size == 0:
            return None
        return self.effects[:, k, hit[0]]

    @property
    def dag_acceptance_rate(self) -> np.ndarray:
        return self.dag_accepted / np.maximum(self.dag_proposed, 1)

    @property
    def theta_acceptance_rate(self) -> float:
        return self.theta_accepted / max(self.theta_proposed, 1)


# ---------------------------------------------------------------------------
# structure moves
# ---------------------------------------------------------------------------

def _draw_operator(adj: np.ndarray, reach: np.ndarray, rng: np.random.Generator):
    masks = _operator_masks(adj, reach)
    counts = [int(m.sum()) for m in masks]
    total = sum(counts)
    if total == 0:
        raise ProposalError("no valid operator for the current DAG")
    u = int(rng.integers(total))
    for kind, m, c in zip(_KINDS, masks, counts):
        if u < c:
            flat = np.flatnonzero(m)[u]
            i, j = divmod(int(flat), adj.shape[0])
            return Operator(kind, i, j), total
        u -= c
    raise AssertionError("unreachable")


def _propose(dag: Dag, reach: np.ndarray, rng: np.random.Generator):
    op, n_cur = _draw_operator(dag.adj, reach, rng)
    new = apply_operator(dag, op)
    new_reach = reachability(new.adj)
    masks = _operator_masks(new.adj, new_reach)
    n_new = int(sum(int(m.sum()) for m in masks))
    return new, op, math.log(n_cur) - math.log(n_new), new_reach


def propose_dag(dag: Dag, rng: np.random.Generator) -> tuple[Dag, Operator, float]:
    """Draw a valid operator uniformly and apply it.

    Returns
    -------
    proposed : Dag
    op : Operator
    log_q_ratio : float
        ``ln |O(dag)| - ln |O(proposed)|``, the log of ``q(dag | proposed) / q(proposed | dag)``.

    Raises
    ------
    ProposalError
        If ``dag`` admits no valid operator.
    """
    new, op, lq, _ = _propose(dag, reachability(dag.adj), rng)
    return new, op, lq


def _changed_nodes(op: Operator) -> tuple[int, ...]:
    return (op.i, op.j) if op.kind is OpKind.REVERSE else (op.j,)


def log_acceptance(state: ChainState, k: int, proposed: Dag, op: Operator,
                   hyper: Hyperparams, log_q_ratio: float = 0.0) -> float:
    """Log Metropolis-Hastings ratio of moving group ``k`` to ``proposed``.

    Only nodes whose parent set changes contribute marginal terms: ``j`` for
    Insert/Delete and both ``i`` and ``j`` for Reverse.
    """
    cache = state.caches[k]
    cur = state.dags[k].adj
    new = proposed.adj
    lr = 0.0
    for v in _changed_nodes(op):
        lr += cache.log_marginal(new, v) - cache.log_marginal(cur, v)
    lr += log_prior_ratio(op.kind, hyper.xi)
    if hyper.exact_proposal_ratio:
        lr += log_q_ratio
    return lr


def accept_dag(state: ChainState, k: int, proposed: Dag, op: Operator, hyper: Hyperparams,
               rng: np.random.Generator, log_q_ratio: Optional[float] = None,
               new_reach: Optional[np.ndarray] = None) -> bool:
    """Metropolis accept/reject of a structure move; updates ``state`` on acceptance.

    If ``log_q_ratio`` is omitted it is recomputed from the operator counts.
    """
    if log_q_ratio is None:
        n_cur = int(sum(int(m.sum()) for m in _operator_masks(state.dags[k].adj, state.reach[k])))
        if new_reach is None:
            new_reach = reachability(proposed.adj)
        n_new = int(sum(int(m.sum()) for m in _operator_masks(proposed.adj, new_reach)))
        log_q_ratio = math.log(n_cur) - math.log(n_new)
    lr = log_acceptance(state, k, proposed, op, hyper, log_q_ratio)
    if lr >= 0.0 or math.log(rng.random()) < lr:
        state.set_dag(k, proposed, new_reach)
        return True
    return False


# ---------------------------------------------------------------------------
# conditional variances and coefficients
# ---------------------------------------------------------------------------

def shared_sigma_params(stats: Sequence[Sequence[NodeStats]], hyper: Hyperparams,
                        ns: Sequence[int], q: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-gamma (shape, rate) of each shared variance given both groups.

    ``stats[k][j]`` are the node statistics of group ``k``. Entries for node 0
    are returned as ``nan`` (its variance is fixed at 1).
    """
    shape = np.full(q, np.nan)
    rate = np.full(q, np.nan)
    for j in range(1, q):
        sh = 0.0
        rt = 0.0
        for k in range(len(stats)):
            st = stats[k][j]
            sh += 0.5 * (shape_param(hyper.a, st.n_parents, q) + ns[k])
            rt += 0.5 * (hyper.g(k) + st.resid)
        shape[j] = sh
        rate[j] = rt
    return shape, rate


def update_shared_sigma(state: ChainState, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Gibbs draw of ``d[1:]`` from the two-group inverse-gamma conditional; ``d[0] = 1``."""
    q = state.q
    stats = [[None] + [state.caches[k].stats(state.dags[k].adj, j) for j in range(1, q)]
             for k in range(2)]
    shape, rate = shared_sigma_params(stats, hyper, [dt.n for dt in state.data], q)
    if np.any(rate[1:] <= 0) or np.any(shape[1:] <= 0):
        raise NumericError("non-positive inverse-gamma parameter in variance update")
    d = np.ones(q)
    d[1:] = rate[1:] / rng.gamma(shape[1:])
    state.d = d
    return d


def update_L(state: ChainState, k: int, rng: np.random.Generator) -> np.ndarray:
    """Gibbs draw of every column of ``L[k]`` given its parents, ``d`` and the data.

    Column ``j`` is drawn from ``N(-l_hat, d[j] * t_bar^{-1})`` on the parent slots.
    """
    q = state.q
    adj = state.dags[k].adj
    cache = state.caches[k]
    L = np.eye(q)
    for j in range(q):
        st = cache.stats(adj, j)
        p = st.n_parents
        if p == 0:
            continue
        eps = rng.standard_normal(p)
        w = dtrsv(st.chol, eps, lower=1, trans=1)
        L[st.pa, j] = -st.l_hat + math.sqrt(state.d[j]) * w
    state.L[k] = L
    return L


# ---------------------------------------------------------------------------
# latent response and cut-off
# ---------------------------------------------------------------------------

def sample_truncated_normal(mu, lo, hi, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw ``N(mu, 1)`` restricted to ``(lo, hi]`` by inversion in log space.

    The interval is mirrored so that the draw always happens in the lower
    tail, where the log-CDF and its inverse keep full relative precision.

    Raises
    ------
    ValidationError
        If any ``lo >= hi``.
    """
    mu, lo, hi = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(lo, dtype=float),
                                     np.asarray(hi, dtype=float))
    if size is not None:
        mu, lo, hi = (np.broadcast_to(v, size) for v in (mu, lo, hi))
    if np.any(~(lo < hi)):
        raise ValidationError("truncation interval must satisfy lo < hi")
    a = lo - mu
    b = hi - mu
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    la = log_ndtr(a2)
    lb = log_ndtr(b2)
    u = np.maximum(rng.random(mu.shape), np.finfo(float).tiny)
    with np.errstate(divide="ignore"):
        lp = lb + np.log(u + (1.0 - u) * np.exp(la - lb))
    z = np.clip(ndtri_exp(lp), a2, b2)
    z = np.where(flip, -z, z)
    out = mu + z
    return out if out.ndim else float(out)


def truncation_bounds(y: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """``(theta, inf)`` for ``y = 1`` and ``(-inf, theta]`` for ``y = 0``."""
    pos = y == 1
    lo = np.where(pos, theta, -np.inf)
    hi = np.where(pos, np.inf, theta)
    return lo, hi


def latent_mean(state: ChainState, k: int) -> np.ndarray:
    """Conditional mean of the latent column, ``-X_pa(0) @ L[pa(0), 0]``."""
    data = state.data[k]
    pa = np.flatnonzero(state.dags[k].adj[:, 0])
    if pa.size == 0:
        return np.zeros(data.n)
    return -(data.X[:, pa] @ state.L[k][pa, 0])


def update_latent(state: ChainState, k: int, rng: np.random.Generator,
                  mu: Optional[np.ndarray] = None) -> np.ndarray:
    """Redraw the latent column of group ``k`` from its truncated-normal conditional."""
    if mu is None:
        mu = latent_mean(state, k)
    lo, hi = truncation_bounds(state.data[k].y, state.theta)
    z = sample_truncated_normal(mu, lo, hi, rng)
    state.set_latent(k, z)
    return z


def _log_psi(y: np.ndarray, eta: float, mu: np.ndarray) -> np.ndarray:
    """``ln |y - Phi(eta - mu)|`` evaluated with log-CDFs."""
    return np.where(y == 1, log_ndtr(mu - eta), log_ndtr(eta - mu))


def log_theta_ratio(theta_new: float, theta: float, ys: Sequence[np.ndarray],
                    mus: Sequence[np.ndarray], sigma0_sq: float) -> float:
    """Log MH ratio for moving the cut-off from ``theta`` to ``theta_new``."""
    lr = 0.0
    for y, mu in zip(ys, mus):
        lr += float(np.sum(_log_psi(y, theta_new, mu)) - np.sum(_log_psi(y, theta, mu)))
    # random-walk kernel ratio f(theta | theta_new) / f(theta_new | theta)
    sd = math.sqrt(sigma0_sq)
    lr += (-0.5 * ((theta - theta_new) / sd) ** 2) - (-0.5 * ((theta_new - theta) / sd) ** 2)
    return lr


def update_theta(state: ChainState, hyper: Hyperparams, rng: np.random.Generator,
                 mus: Optional[Sequence[np.ndarray]] = None) -> tuple[float, bool]:
    """Random-walk Metropolis step for ``theta`` with the latent columns integrated out.

    On acceptance the latent columns are redrawn given the new cut-off when
    ``hyper.refresh_latent_after_theta`` is set, which keeps them consistent
    with ``y``.
    """
    if mus is None:
        mus = [latent_mean(state, k) for k in range(2)]
    prop = state.theta + math.sqrt(hyper.sigma0_sq) * rng.standard_normal()
    lr = log_theta_ratio(prop, state.theta, [dt.y for dt in state.data], mus, hyper.sigma0_sq)
    accepted = bool(lr >= 0.0 or math.log(rng.random()) < lr)
    if accepted:
        state.theta = float(prop)
        if hyper.refresh_latent_after_theta:
            for k in range(2):
                update_latent(state, k, rng, mus[k])
    return state.theta, accepted


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def init_state(data1: GroupData, data2: GroupData, hyper: Hyperparams,
               rng: np.random.Generator, center: bool = True) -> ChainState:
    """Starting state: covariate-based DAGs, ``theta = 0``, ``L = I``, ``d = 1``."""
    q = data1.q
    dags = [initial_dag_estimate(dt.x_obs, hyper.zero_tol, center=center) for dt in (data1, data2)]
    state = ChainState(dags, [np.eye(q), np.eye(q)], np.ones(q), 0.0, [data1, data2], hyper)
    for k in range(2):
        lo, hi = truncation_bounds(state.data[k].y, 0.0)
        state.set_latent(k, sample_truncated_normal(np.zeros(state.data[k].n), lo, hi, rng))
    return state


def run_chain(data1: GroupData, data2: GroupData, hyper: Hyperparams, rng: np.random.Generator,
              targets: Optional[Sequence[int]] = None, x_tilde: float = 1.0,
              debug: bool = False, state: Optional[ChainState] = None) -> ChainTrace:
    """Run the sampler for ``hyper.T`` iterations and keep the last ``T - B``.

    Parameters
    ----------
    data1, data2 : GroupData
        Group data. They are copied; the inputs are not modified.
    hyper : Hyperparams
        Unresolved defaults (``a``, ``g``) are filled from the data.
    rng : numpy.random.Generator
    targets : sequence of int, optional
        Intervention targets for the recorded effects; all covariates by default.
    x_tilde : float
        Intervention level for the recorded effects.
    debug : bool
        Check every state invariant after each iteration.
    state : ChainState, optional
        Custom starting state (its data objects are used as is).

    Returns
    -------
    ChainTrace
    """
    if data1.q != data2.q:
        raise ValidationError(f"groups have different numbers of nodes ({data1.q} vs {data2.q})")
    q = data1.q
    if q < 2:
        raise ValidationError("need at least one covariate")
    hyper = hyper.resolve(q, data1.n, data2.n)
    if state is None:
        state = init_state(data1.copy(), data2.copy(), hyper, rng)
    targets = np.arange(1, q) if targets is None else np.asarray(targets, dtype=int)
    if np.any((targets < 1) | (targets >= q)):
        raise ValidationError("intervention targets must be covariate nodes")

    T, B = int(hyper.T), int(hyper.B)
    R = T - B
    edges = np.zeros((R, 2, q, q), dtype=bool)
    thetas = np.empty(R)
    Ls = np.empty((R, 2, q, q))
    Ds = np.empty((R, q))
    effects = np.empty((R, 2, targets.size))
    dag_prop = np.zeros(2, dtype=np.int64)
    dag_acc = np.zeros(2, dtype=np.int64)
    th_prop = th_acc = 0

    for it in range(T):
        try:
            for k in range(2):
                new, op, lq, new_reach = _propose(state.dags[k], state.reach[k], rng)
                dag_prop[k] += 1
                if accept_dag(state, k, new, op, hyper, rng, lq, new_reach):
                    dag_acc[k] += 1
            update_shared_sigma(state, hyper, rng)
            mus = []
            for k in range(2):
                update_L(state, k, rng)
                mu = latent_mean(state, k)
                update_latent(state, k, rng, mu)
                mus.append(mu)
            _, acc = update_theta(state, hyper, rng, mus)
            th_prop += 1
            th_acc += int(acc)
            if debug:
                state.check(it)
            if it >= B:
                r = it - B
                thetas[r] = state.theta
                Ds[r] = state.d
                for k in range(2):
                    adj = state.dags[k].adj
                    edges[r, k] = adj
                    Ls[r, k] = state.L[k]
                    linv = np.linalg.inv(state.L[k])
                    sigma = (linv.T * state.d) @ linv
                    effects[r, k] = effects_for_state(sigma, adj, state.theta, targets, x_tilde)
        except (ValidationError, NumericError) as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc

    return ChainTrace(edges, thetas, Ls, Ds, effects, targets, float(x_tilde),
                      dag_prop, dag_acc, th_prop, th_acc)


def edge_probabilities(trace: ChainTrace, k: int) -> np.ndarray:
    """Posterior inclusion frequency of every directed edge in group ``k``."""
    if trace.n_records == 0:
        raise ValidationError("empty trace")
    return trace.edges[:, k].mean(axis=0)
