"""Post-intervention distribution of the latent response and BMA effect estimates.

Under ``do(X_s = x)`` the latent response is Gaussian with mean ``gamma_s x``
and variance ``sigma_do^2``, where ``(gamma_s, gamma)`` are the regression
coefficients of node 0 on the family ``{s} u pa(s)`` and the parents are
averaged over with their observational marginal. The probability that the
binary response is 1 is then ``1 - Phi((theta - gamma_s x) / sigma_do)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import ndtr

from .errors import NumericError, ValidationError

__all__ = [
    "BartlettParams",
    "EffectEstimate",
    "bartlett_params",
    "do_expectation",
    "effects_for_state",
    "bma_effects",
]


@dataclass(frozen=True)
class BartlettParams:
    """Regression of node 0 on ``fa(s)`` and the implied interventional variance."""

    delta1_sq: float
    gamma_s: float
    gamma: np.ndarray
    t_mat: np.ndarray
    sigma_do_sq: float


@dataclass(frozen=True)
class EffectEstimate:
    """Per-iteration values of ``E[Y | do(X_s = level)]`` and their summary."""

    node: int
    level: float
    values: np.ndarray
    mean: float
    lower: float
    upper: float

    @classmethod
    def from_values(cls, node: int, level: float, values) -> "EffectEstimate":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise ValidationError("no effect values to summarise")
        lo, hi = np.quantile(v, [0.025, 0.975])
        return cls(node, float(level), v, float(v.mean()), float(lo), float(hi))


def _check_target(q: int, s: int, pa_s: np.ndarray) -> None:
    if not 0 < s < q:
        raise ValidationError(f"intervention target must be a covariate node 1..{q - 1}, got {s}")
    if 0 in pa_s:
        raise ValidationError("the latent response cannot be a parent of the target")
    if s in pa_s:
        raise ValidationError("target listed among its own parents")


def _solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(a, lower=True), b)
    except LinAlgError as exc:
        raise NumericError(f"family covariance block is singular: {exc}") from exc


def bartlett_params(sigma, s: int, pa_s) -> BartlettParams:
    """Bartlett decomposition of node 0 given ``fa(s) = {s} u pa_s``.

    Parameters
    ----------
    sigma : (q, q) array_like
        Covariance matrix of all nodes, node 0 first.
    s : int
        Intervention target (``s >= 1``).
    pa_s : sequence of int
        Parents of ``s``.

    Returns
    -------
    BartlettParams

    Raises
    ------
    ValidationError
        For an invalid target or parent set.
    NumericError
        If the covariance of ``fa(s)`` is singular.
    """
    sig = np.asarray(sigma, dtype=float)
    pa = np.asarray(pa_s, dtype=int).ravel()
    _check_target(sig.shape[0], s, pa)
    fa = np.concatenate([[s], pa])
    coef = _solve_spd(sig[np.ix_(fa, fa)], sig[fa, 0])
    delta = float(sig[0, 0] - sig[0, fa] @ coef)
    if not delta > 0:
        raise NumericError("non-positive conditional variance of the response")
    gamma_s = float(coef[0])
    gamma = coef[1:]
    if pa.size == 0:
        return BartlettParams(delta, gamma_s, gamma, np.empty((0, 0)), delta)
    s_pp = sig[np.ix_(pa, pa)]
    t_mat = np.linalg.inv(s_pp) + np.outer(gamma, gamma) / delta
    shrink = 1.0 - float(gamma @ np.linalg.solve(t_mat, gamma)) / delta
    if not shrink > 0:
        raise NumericError("interventional variance correction is not positive")
    sigma_do = delta / shrink
    if sigma_do < delta * (1.0 - 1e-12):
        raise NumericError("interventional variance below the conditional variance")
    return BartlettParams(delta, gamma_s, gamma, t_mat, sigma_do)


def do_expectation(sigma, theta: float, s: int, pa_s, x_tilde: float) -> float:
    """``P(Y = 1 | do(X_s = x_tilde))`` under covariance ``sigma`` and cut-off ``theta``."""
    bp = bartlett_params(sigma, s, pa_s)
    return float(ndtr((bp.gamma_s * x_tilde - theta) / np.sqrt(bp.sigma_do_sq)))


def effects_for_state(sigma: np.ndarray, adj: np.ndarray, theta: float,
                      targets: Sequence[int], x_tilde: float) -> np.ndarray:
    """Interventional probabilities for several targets under one parameter draw.

    Uses ``sigma_do^2 = delta^2 + gamma' Sigma_pa gamma``, which is the
    closed form of the interventional variance.
    """
    out = np.empty(len(targets))
    for idx, s in enumerate(targets):
        pa = np.flatnonzero(adj[:, s])
        fa = np.concatenate([[s], pa])
        coef = np.linalg.solve(sigma[np.ix_(fa, fa)], sigma[fa, 0])
        delta = sigma[0, 0] - sigma[0, fa] @ coef
        gamma = coef[1:]
        var = delta + gamma @ sigma[np.ix_(pa, pa)] @ gamma
        out[idx] = (coef[0] * x_tilde - theta) / np.sqrt(var)
    return ndtr(out)


def bma_effects(trace, s: int, x_tilde: float = 1.0, group: int = 0) -> EffectEstimate:
    """Model-averaged ``E[Y | do(X_s = x_tilde)]`` over the kept iterations of a chain.

    Parameters
    ----------
    trace : ChainTrace
        Post burn-in record with per-iteration ``L``, ``D``, edges and ``theta``.
    s : int
        Intervention target.
    x_tilde : float
        Intervention level.
    group : int
        Group index (0 or 1).
    """
    if trace.n_records == 0:
        raise ValidationError("empty trace")
    q = trace.q
    if not 0 < s < q:
        raise ValidationError(f"intervention target must be a covariate node 1..{q - 1}, got {s}")
    recorded = trace.recorded_effects(group, s, x_tilde)
    if recorded is not None:
        return EffectEstimate.from_values(s, x_tilde, recorded)
    vals = np.empty(trace.n_records)
    for t in range(trace.n_records):
        sigma = trace.covariance(t, group)
        vals[t] = effects_for_state(sigma, trace.edges[t, group], trace.theta[t], [s], x_tilde)[0]
    return EffectEstimate.from_values(s, x_tilde, vals)
