"""DAG representation, proposal operators and the Bernoulli edge prior.

Nodes are indexed ``0..q-1``. Node 0 is the latent response; it is kept as a
sink, so no edge may leave it. ``adj[i, j]`` is ``True`` when the edge
``i -> j`` is present.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleError, OperatorError, ValidationError, IngestionError

__all__ = [
    "Dag",
    "OpKind",
    "Operator",
    "is_acyclic",
    "topological_order",
    "parents",
    "reachability",
    "enumerate_valid_operators",
    "count_valid_operators",
    "apply_operator",
    "random_dag",
    "log_prior",
    "prior_ratio",
    "read_adjacency_csv",
    "write_adjacency_csv",
]


def _as_bool_matrix(adj) -> np.ndarray:
    a = np.asarray(adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {a.shape}")
    if a.dtype != bool:
        if not np.all((a == 0) | (a == 1)):
            raise ValidationError("adjacency entries must be 0/1")
        a = a.astype(bool)
    return a


def topological_order(adj) -> list[int] | None:
    """Kahn's algorithm. Returns a topological order or ``None`` on a cycle."""
    a = _as_bool_matrix(adj)
    q = a.shape[0]
    indeg = a.sum(axis=0).astype(int)
    stack = [v for v in range(q) if indeg[v] == 0]
    order = []
    while stack:
        u = stack.pop()
        order.append(u)
        for v in np.flatnonzero(a[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(int(v))
    if len(order) != q:
        return None
    return order


def is_acyclic(adj) -> bool:
    """True iff the directed graph given by ``adj`` has a topological order."""
    a = _as_bool_matrix(adj)
    if np.any(np.diag(a)):
        return False
    return topological_order(a) is not None


def reachability(adj: np.ndarray) -> np.ndarray:
    """Reflexive transitive closure: ``R[u, v]`` iff a directed path u ~> v exists."""
    r = np.asarray(adj, dtype=bool) | np.eye(adj.shape[0], dtype=bool)
    for k in range(r.shape[0]):
        r |= np.outer(r[:, k], r[k])
    return r


class Dag:
    """Immutable DAG on ``q`` nodes with node 0 constrained to be a sink.

    Parameters
    ----------
    adj : array_like
        ``q x q`` 0/1 or boolean adjacency matrix, ``adj[i, j]`` for ``i -> j``.

    Raises
    ------
    ValidationError
        Shape problems, self loops, two-way edges or an edge out of node 0.
    CycleError
        If the graph contains a directed cycle.
    """

    __slots__ = ("_adj", "_hash")

    def __init__(self, adj, *, _trusted: bool = False):
        if _trusted:
            a = adj
        else:
            a = _as_bool_matrix(adj).copy()
            q = a.shape[0]
            if q < 2:
                raise ValidationError("a DAG needs at least two nodes")
            if np.any(np.diag(a)):
                raise ValidationError("self loops are not allowed")
            if np.any(a & a.T):
                raise ValidationError("an edge may be present in one direction only")
            if np.any(a[0]):
                raise ValidationError("node 0 (latent response) must not have children")
            if topological_order(a) is None:
                raise CycleError("adjacency matrix contains a directed cycle")
        a.flags.writeable = False
        self._adj = a
        self._hash = None

    @classmethod
    def empty(cls, q: int) -> "Dag":
        if q < 2:
            raise ValidationError("a DAG needs at least two nodes")
        return cls(np.zeros((q, q), dtype=bool), _trusted=True)

    @classmethod
    def from_edges(cls, q: int, edges: Iterable[tuple[int, int]]) -> "Dag":
        a = np.zeros((q, q), dtype=bool)
        for i, j in edges:
            if not (0 <= i < q and 0 <= j < q):
                raise ValidationError(f"edge ({i}, {j}) out of range for q={q}")
            a[i, j] = True
        return cls(a)

    @property
    def q(self) -> int:
        return self._adj.shape[0]

    @property
    def adj(self) -> np.ndarray:
        """Read-only boolean adjacency matrix."""
        return self._adj

    @property
    def n_edges(self) -> int:
        return int(self._adj.sum())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self._adj))]

    def parents(self, j: int) -> np.ndarray:
        return parents(self, j)

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self._adj[i, j])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return self._adj.shape == other._adj.shape and bool(np.array_equal(self._adj, other._adj))

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.q, np.packbits(self._adj).tobytes()))
        return self._hash

    def __repr__(self) -> str:
        return f"Dag(q={self.q}, edges={self.edges()})"


def parents(dag: Dag, j: int) -> np.ndarray:
    """Ascending array of the parents of node ``j``.

    Raises
    ------
    IndexError
        If ``j`` is not a node of ``dag``.
    """
    if not 0 <= j < dag.q:
        raise IndexError(f"node {j} out of range for q={dag.q}")
    return np.flatnonzero(dag.adj[:, j])


class OpKind(enum.Enum):
    INSERT = "insert"
    DELETE = "delete"
    REVERSE = "reverse"


@dataclass(frozen=True)
class Operator:
    """A local move on the edge ``i -> j``."""

    kind: OpKind
    i: int
    j: int

    def __post_init__(self):
        if self.i == self.j:
            raise OperatorError("operator endpoints must differ")

    def __str__(self) -> str:
        return f"{self.kind.name.capitalize()}({self.i}->{self.j})"


def _operator_masks(adj: np.ndarray, reach: np.ndarray | None = None):
    """Boolean masks of valid Delete, Reverse and Insert operators.

    A Reverse of ``i -> j`` is acyclic iff ``i -> j`` is the only path from
    ``i`` to ``j``, i.e. no child ``c != j`` of ``i`` reaches ``j``. An Insert
    of ``i -> j`` is acyclic iff ``j`` does not reach ``i``.
    """
    if reach is None:
        reach = reachability(adj)
    a = adj.astype(np.int64)
    # number of children of i (j included) that reach j
    paths = a @ reach.astype(np.int64)
    delete = adj.copy()
    reverse = adj & (paths == 1)
    reverse[:, 0] = False  # reversing i -> 0 would give node 0 a child
    vacant = ~(adj | adj.T)
    np.fill_diagonal(vacant, False)
    insert = vacant & ~reach.T
    insert[0, :] = False
    return delete, reverse, insert


def count_valid_operators(adj: np.ndarray, reach: np.ndarray | None = None) -> int:
    """Number of valid operators on the DAG with adjacency ``adj``."""
    d, r, ins = _operator_masks(adj, reach)
    return int(d.sum() + r.sum() + ins.sum())


def enumerate_valid_operators(dag: Dag) -> list[Operator]:
    """All Delete, Reverse and Insert moves that keep ``dag`` a valid DAG.

    Insert moves are listed per orientation, so a vacant pair may contribute
    zero, one or two operators.
    """
    d, r, ins = _operator_masks(dag.adj)
    ops = [Operator(OpKind.DELETE, int(i), int(j)) for i, j in zip(*np.nonzero(d))]
    ops += [Operator(OpKind.REVERSE, int(i), int(j)) for i, j in zip(*np.nonzero(r))]
    ops += [Operator(OpKind.INSERT, int(i), int(j)) for i, j in zip(*np.nonzero(ins))]
    return ops


def apply_operator(dag: Dag, op: Operator) -> Dag:
    """Return a new DAG with ``op`` applied.

    Raises
    ------
    OperatorError
        If the operator does not apply to ``dag``.
    CycleError
        If the result would contain a cycle.
    """
    q = dag.q
    i, j = op.i, op.j
    if not (0 <= i < q and 0 <= j < q):
        raise OperatorError(f"{op} out of range for q={q}")
    a = dag.adj.copy()
    if op.kind is OpKind.INSERT:
        if a[i, j] or a[j, i]:
            raise OperatorError(f"{op}: pair already joined")
        if i == 0:
            raise OperatorError(f"{op}: node 0 must stay a sink")
        a[i, j] = True
    elif op.kind is OpKind.DELETE:
        if not a[i, j]:
            raise OperatorError(f"{op}: edge absent")
        a[i, j] = False
    else:
        if not a[i, j]:
            raise OperatorError(f"{op}: edge absent")
        if j == 0:
            raise OperatorError(f"{op}: node 0 must stay a sink")
        a[i, j] = False
        a[j, i] = True
    if op.kind is not OpKind.DELETE and topological_order(a) is None:
        raise CycleError(f"{op} creates a cycle")
    return Dag(a, _trusted=True)


def _check_xi(xi: float) -> None:
    if not (0.0 < xi < 1.0) or not math.isfinite(xi):
        raise ValidationError(f"edge probability must lie in (0, 1), got {xi}")


def random_dag(q: int, xi: float, rng: np.random.Generator) -> Dag:
    """Parent-ordered random DAG: each slot ``i -> j`` with ``i > j`` is on w.p. ``xi``."""
    _check_xi(xi)
    if q < 2:
        raise ValidationError("a DAG needs at least two nodes")
    draws = rng.random((q, q)) < xi
    return Dag(np.tril(draws, k=-1), _trusted=True)


def log_prior(dag: Dag, xi: float) -> float:
    """Log of the independent Bernoulli(xi) prior over the q(q-1)/2 slots."""
    _check_xi(xi)
    m = dag.n_edges
    slots = dag.q * (dag.q - 1) // 2
    return m * math.log(xi) + (slots - m) * math.log1p(-xi)


def prior_ratio(op: Operator, xi: float) -> float:
    """Prior odds f(D')/f(D) of the move ``op``."""
    _check_xi(xi)
    if op.kind is OpKind.INSERT:
        return xi / (1.0 - xi)
    if op.kind is OpKind.DELETE:
        return (1.0 - xi) / xi
    return 1.0


def log_prior_ratio(kind: OpKind, xi: float) -> float:
    if kind is OpKind.INSERT:
        return math.log(xi) - math.log1p(-xi)
    if kind is OpKind.DELETE:
        return math.log1p(-xi) - math.log(xi)
    return 0.0


def read_adjacency_csv(path: str | PathLike) -> Dag:
    """Read a headerless 0/1 CSV; lines starting with ``#`` are ignored."""
    try:
        a = np.loadtxt(path, delimiter=",", comments="#", dtype=float, ndmin=2)
    except OSError:
        raise
    except ValueError as exc:
        raise IngestionError(f"{path}: cannot parse adjacency matrix ({exc})") from exc
    return Dag(a)


def write_adjacency_csv(path: str | PathLike, dag: Dag | np.ndarray,
                        header: Sequence[str] = ()) -> None:
    a = dag.adj if isinstance(dag, Dag) else np.asarray(dag)
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for row in a.astype(int):
            fh.write(",".join(str(v) for v in row) + "\n")
