"""Synthetic two-group scenarios and recovery metrics.

A scenario draws one parent-ordered DAG per group, coefficients and shared
conditional variances, generates Gaussian data from the structural equations
and thresholds the latent column at a shared cut-off. Metrics compare a chain
trace against this ground truth.
"""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .causal import do_expectation
from .cholesky import partial_correlations
from .errors import MetricError, ValidationError
from .graph import Dag, random_dag
from .mcmc import ChainTrace, edge_probabilities, run_chain
from .model import GroupData, Hyperparams

logger = logging.getLogger(__name__)

__all__ = [
    "Truth",
    "Scenario",
    "EvalReport",
    "CellResult",
    "generate_scenario",
    "lower_elements",
    "roc_auc",
    "average_roc",
    "partial_corr_errors",
    "effect_size_error",
    "evaluate",
    "run_replication",
    "run_grid",
    "skipped_cell",
    "auc_table",
]


@dataclass(frozen=True)
class Truth:
    dags: tuple[Dag, Dag]
    L: tuple[np.ndarray, np.ndarray]
    D: np.ndarray
    theta: float
    sigma: tuple[np.ndarray, np.ndarray]
    latent: tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class Scenario:
    truth: Truth
    data: tuple[GroupData, GroupData]
    config: dict


@dataclass
class EvalReport:
    """Recovery metrics of one fitted replication."""

    roc: np.ndarray
    auc: float
    partial_err_mean: float
    partial_err_abs: float
    effect_err: dict
    theta_err: float
    theta_mean: float
    theta_band: tuple[float, float]
    theta_true: float
    wall_time: float = float("nan")

    @property
    def theta_covered(self) -> bool:
        return self.theta_band[0] <= self.theta_true <= self.theta_band[1]


def _covariance(L: np.ndarray, D: np.ndarray) -> np.ndarray:
    linv = np.linalg.inv(L)
    return (linv.T * D) @ linv


def generate_scenario(q: int, n1: int, n2: int, xi: float, rng: np.random.Generator,
                      coef_range: tuple[float, float] = (0.3, 1.0),
                      d_range: tuple[float, float] = (0.5, 1.5),
                      theta_range: tuple[float, float] = (-0.7, 0.7),
                      seed: Optional[int] = None) -> Scenario:
    """Draw a ground truth and simulate both groups.

    Parameters
    ----------
    q : int
        Number of nodes including the latent response (node 0).
    n1, n2 : int
        Group sample sizes.
    xi : float
        Edge probability of the parent-ordered random DAGs.
    rng : numpy.random.Generator
    coef_range : (float, float)
        Range of coefficient magnitudes; signs are random.
    d_range : (float, float)
        Range of the conditional variances of nodes ``1..q-1``.
    theta_range : (float, float)
        Range of the cut-off.
    seed : int, optional
        Stored in the scenario config for bookkeeping only.
    """
    if q < 2:
        raise ValidationError("q must be at least 2")
    if n1 < 1 or n2 < 1:
        raise ValidationError("group sizes must be positive")
    dags = tuple(random_dag(q, xi, rng) for _ in range(2))
    D = np.ones(q)
    D[1:] = rng.uniform(*d_range, size=q - 1)
    theta = float(rng.uniform(*theta_range))
    Ls, sigmas, latents, data = [], [], [], []
    for dag, n in zip(dags, (n1, n2)):
        L = np.eye(q)
        ii, jj = np.nonzero(dag.adj)
        mags = rng.uniform(*coef_range, size=ii.size)
        signs = np.where(rng.random(ii.size) < 0.5, -1.0, 1.0)
        L[ii, jj] = mags * signs
        eps = rng.standard_normal((n, q)) * np.sqrt(D)
        # L' x = eps per row, i.e. X = E L^{-1}
        X = np.linalg.solve(L.T, eps.T).T
        y = (X[:, 0] > theta).astype(np.int8)
        Ls.append(L)
        sigmas.append(_covariance(L, D))
        latents.append(X[:, 0].copy())
        data.append(GroupData(y, X[:, 1:]))
    truth = Truth(dags, tuple(Ls), D, theta, tuple(sigmas), tuple(latents))
    config = dict(q=q, n1=n1, n2=n2, xi=xi, seed=seed, coef_range=tuple(coef_range),
                  d_range=tuple(d_range), theta_range=tuple(theta_range))
    return Scenario(truth, tuple(data), config)


def lower_elements(m: np.ndarray) -> np.ndarray:
    """Strictly lower-triangular entries ``m[i, j]``, ``i > j``, row-major."""
    return np.asarray(m)[np.tril_indices(m.shape[0], k=-1)]


def roc_auc(truth_edges, scores) -> tuple[np.ndarray, float]:
    """ROC curve and trapezoidal AUC.

    Thresholds sweep the distinct score values from high to low; tied scores
    form one step.

    Returns
    -------
    roc : (m, 2) array
        ``(fpr, tpr)`` points from ``(0, 0)`` to ``(1, 1)``.
    auc : float

    Raises
    ------
    MetricError
        On length mismatch or when only one class is present.
    """
    t = np.asarray(truth_edges).astype(bool).ravel()
    s = np.asarray(scores, dtype=float).ravel()
    if t.shape != s.shape:
        raise MetricError(f"truth and scores differ in length ({t.size} vs {s.size})")
    npos = int(t.sum())
    nneg = t.size - npos
    if npos == 0 or nneg == 0:
        raise MetricError("truth must contain both edges and non-edges")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    t_sorted = t[order]
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(~t_sorted)
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s.size - 1]
    tpr = np.r_[0.0, tp[last] / npos]
    fpr = np.r_[0.0, fp[last] / nneg]
    roc = np.column_stack([fpr, tpr])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return roc, auc


def _interp_roc(roc: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """TPR of a piecewise-linear ROC curve at ``grid``.

    A vertical segment (repeated FPR) contributes its top at that FPR and its
    bottom as the right end of the preceding segment.
    """
    fpr, tpr = roc[:, 0], roc[:, 1]
    ux, inv = np.unique(fpr, return_inverse=True)
    hi = np.full(ux.size, -np.inf)
    lo = np.full(ux.size, np.inf)
    np.maximum.at(hi, inv, tpr)
    np.minimum.at(lo, inv, tpr)
    idx = np.clip(np.searchsorted(ux, grid, side="right") - 1, 0, ux.size - 1)
    out = hi[idx].copy()
    nxt = np.minimum(idx + 1, ux.size - 1)
    between = (grid > ux[idx]) & (nxt > idx)
    w = np.where(between, (grid - ux[idx]) / np.where(between, ux[nxt] - ux[idx], 1.0), 0.0)
    out[between] = (hi[idx] + w * (lo[nxt] - hi[idx]))[between]
    out[grid < ux[0]] = 0.0
    out[grid > ux[-1]] = 1.0
    return out


def average_roc(rocs: Sequence[np.ndarray], grid: Optional[np.ndarray] = None):
    """Vertically averaged ROC curve and its AUC.

    Each curve is interpolated (as a step-free piecewise-linear function of
    FPR) on a common grid and the TPRs are averaged.
    """
    if grid is None:
        grid = np.linspace(0.0, 1.0, 201)
    grid = np.asarray(grid, dtype=float)
    tprs = [_interp_roc(np.asarray(r, dtype=float), grid) for r in rocs]
    if not tprs:
        raise MetricError("no curves to average")
    mean_tpr = np.mean(tprs, axis=0)
    roc = np.column_stack([grid, mean_tpr])
    auc = float(np.sum(np.diff(grid) * (mean_tpr[1:] + mean_tpr[:-1]) / 2.0))
    return roc, auc


def partial_corr_errors(trace: ChainTrace, sigma_true: np.ndarray, k: int) -> tuple[float, float]:
    """Mean signed and absolute error ``rho - rho_hat`` over iterations and pairs ``i < j``."""
    if trace.n_records == 0:
        raise MetricError("empty trace")
    rho = partial_correlations(np.linalg.inv(sigma_true))
    iu = np.triu_indices(rho.shape[0], k=1)
    est = trace.partial_correlations(k)[:, iu[0], iu[1]]
    diff = rho[iu][None, :] - est
    return float(diff.mean()), float(np.abs(diff).mean())


def effect_size_error(truth: Truth, trace: ChainTrace, s: int, x_tilde: float = 1.0,
                      k: int = 0) -> float:
    """True interventional probability minus its model-averaged estimate."""
    from .causal import bma_effects

    pa = np.flatnonzero(truth.dags[k].adj[:, s])
    true_eff = do_expectation(truth.sigma[k], truth.theta, s, pa, x_tilde)
    return true_eff - bma_effects(trace, s, x_tilde, k).mean


def evaluate(scenario: Scenario, trace: ChainTrace, wall_time: float = float("nan"),
             x_tilde: Optional[float] = None) -> EvalReport:
    """Metrics of one fitted scenario.

    Effects are evaluated for every target with a true edge into node 0.
    """
    truth = scenario.truth
    if trace.q != truth.dags[0].q:
        raise ValidationError("trace and truth have different numbers of nodes")
    x_tilde = trace.x_tilde if x_tilde is None else x_tilde
    t = np.concatenate([lower_elements(d.adj) for d in truth.dags])
    s = np.concatenate([lower_elements(edge_probabilities(trace, k)) for k in range(2)])
    roc, auc = roc_auc(t, s)
    errs = [partial_corr_errors(trace, truth.sigma[k], k) for k in range(2)]
    effect_err = {}
    for k in range(2):
        for src in np.flatnonzero(truth.dags[k].adj[:, 0]):
            effect_err[(k, int(src))] = effect_size_error(truth, trace, int(src), x_tilde, k)
    th = trace.theta
    lo, hi = np.quantile(th, [0.025, 0.975])
    return EvalReport(
        roc=roc, auc=auc,
        partial_err_mean=float(np.mean([e[0] for e in errs])),
        partial_err_abs=float(np.mean([e[1] for e in errs])),
        effect_err=effect_err,
        theta_err=float(th.mean() - truth.theta),
        theta_mean=float(th.mean()),
        theta_band=(float(lo), float(hi)),
        theta_true=truth.theta,
        wall_time=wall_time,
    )


def run_replication(q: int, n1: int, n2: int, xi: float, hyper: Hyperparams,
                    seed, x_tilde: float = 1.0) -> tuple[Scenario, ChainTrace, EvalReport]:
    """Simulate, fit and evaluate one replication from a seed or ``SeedSequence``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    gen_ss, chain_ss = ss.spawn(2)
    scen = generate_scenario(q, n1, n2, xi, np.random.default_rng(gen_ss),
                             seed=None if isinstance(seed, np.random.SeedSequence) else seed)
    start = time.perf_counter()
    trace = run_chain(scen.data[0], scen.data[1], hyper, np.random.default_rng(chain_ss),
                      x_tilde=x_tilde)
    wall = time.perf_counter() - start
    return scen, trace, evaluate(scen, trace, wall)


def skipped_cell(q: int, xi: float) -> bool:
    """Cells whose DAGs are too dense for the grid's sample sizes."""
    return (q == 40 and xi >= 0.4) or (q == 50 and xi >= 0.3)


@dataclass
class CellResult:
    q: int
    n1: int
    n2: int
    xi: float
    reports: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    @property
    def mean_auc(self) -> float:
        return float(np.mean([r.auc for r in self.reports])) if self.reports else float("nan")

    @property
    def averaged_roc(self):
        if not self.reports:
            return np.empty((0, 2)), float("nan")
        return average_roc([r.roc for r in self.reports])

    def mean_of(self, attr: str) -> float:
        if not self.reports:
            return float("nan")
        return float(np.mean([getattr(r, attr) for r in self.reports]))


def _grid_job(args):
    q, n1, n2, xi, hyper, ss, x_tilde = args
    try:
        return run_replication(q, n1, n2, xi, hyper, ss, x_tilde)[2], None
    except Exception as exc:  # a failed replication marks its cell partial
        return None, f"{type(exc).__name__}: {exc}"


def run_grid(cells: Iterable[tuple[int, int, int, float]], replications: int,
             hyper: Hyperparams, seed: int = 0, threads: int = 1,
             x_tilde: float = 1.0) -> list[CellResult]:
    """Run ``replications`` independent replications for each ``(q, n1, n2, xi)`` cell.

    Every replication gets its own child of ``SeedSequence(seed)``, so results
    do not depend on ``threads``.
    """
    if replications < 1:
        raise ValidationError("replications must be positive")
    cells = [tuple(c) for c in cells]
    root = np.random.SeedSequence(seed)
    cell_seeds = root.spawn(len(cells))
    jobs, results = [], []
    for (q, n1, n2, xi), css in zip(cells, cell_seeds):
        res = CellResult(int(q), int(n1), int(n2), float(xi))
        results.append(res)
        if skipped_cell(q, xi):
            warnings.warn(f"cell q={q}, xi={xi} needs far larger samples; skipped", stacklevel=2)
            continue
        for rs in css.spawn(replications):
            jobs.append((len(results) - 1, (int(q), int(n1), int(n2), float(xi), hyper, rs, x_tilde)))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_grid_job, [j[1] for j in jobs]))
    else:
        outs = [_grid_job(j[1]) for j in jobs]
    for (idx, _), (rep, err) in zip(jobs, outs):
        if rep is None:
            logger.warning("replication failed in cell %d: %s", idx, err)
            results[idx].failures.append(err)
        else:
            results[idx].reports.append(rep)
    return results


def auc_table(results: Sequence[CellResult], averaged: bool = True):
    """AUC matrix with one row per ``(n1, n2)`` and one column per ``q``.

    Returns ``(row_keys, qs, table)``; missing or skipped cells are ``nan``.
    """
    rows = sorted({(r.n1, r.n2) for r in results})
    qs = sorted({r.q for r in results})
    table = np.full((len(rows), len(qs)), np.nan)
    for r in results:
        val = r.averaged_roc[1] if averaged else r.mean_auc
        table[rows.index((r.n1, r.n2)), qs.index(r.q)] = val
    return rows, qs, table
