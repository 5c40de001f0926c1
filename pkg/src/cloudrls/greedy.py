"""Centralized and greedy baselines.

C-RLS runs one classical RLS recursion on the stacked data of all agents.
The greedy estimators run classical (unregularized) RLS on every agent and
recombine the local estimates on the cloud:

* S-RLS:  plain mean of the local estimates.
* SW-RLS: precision-weighted mean, weights phi_n^{-1}.
* M-RLS / MW-RLS: as S/SW, but each agent's prior estimate is overwritten
  by the previous global estimate before its update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cloudrls.core import RlsState, gain_update, local_rls_update
from cloudrls.errors import ConditioningError, ConfigurationError

__all__ = [
    "LumpedSample",
    "centralized_rls_step",
    "classical_rls_step",
    "lump",
    "mixed_step",
    "s_rls_global",
    "sw_rls_global",
]


@dataclass(frozen=True)
class LumpedSample:
    """All agents' data for one step: ``y`` (N*n_y,) and ``X`` (n_theta, N*n_y), agent blocks in index order."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != y.shape[0]:
            raise ConfigurationError(f"lumped regressor {X.shape} does not match output length {y.shape[0]}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)


def lump(X, y) -> LumpedSample:
    """Stack per-agent regressors (N, n_theta, n_y) and outputs (N, n_y) or (N,)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[..., None]
    n_agents, n_theta, n_y = X.shape
    y = np.asarray(y, dtype=float).reshape(n_agents * n_y)
    return LumpedSample(y=y, X=np.moveaxis(X, 0, 1).reshape(n_theta, n_agents * n_y))


def centralized_rls_step(state: RlsState, lumped: LumpedSample) -> RlsState:
    """One C-RLS step on the lumped sample.

    With ``state.lam == 1`` this is the plain recursion
    K = phi X (I + X' phi X)^{-1}, phi <- (I - K X') phi. Smaller ``lam``
    gives the exponentially weighted variant (phi scaled by 1/lam).
    """
    K, phi = gain_update(state.phi, lumped.X, state.lam)
    theta = local_rls_update(K, lumped.X, lumped.y, state.theta)
    return RlsState(theta=theta, phi=phi, lam=state.lam, t=state.t + 1)


def classical_rls_step(theta, phi, X, y, lam):
    """Batched classical RLS step for N agents.

    ``theta`` (N, n_theta), ``phi`` (N, n_theta, n_theta), ``X`` (N, n_theta, n_y),
    ``y`` (N, n_y), ``lam`` scalar or (N,). Returns (theta_new, phi_new).
    """
    K, phi_new = gain_update(phi, X, lam)
    return local_rls_update(K, X, y, theta), phi_new


def s_rls_global(local_estimates) -> np.ndarray:
    """Arithmetic mean over the agent axis."""
    local_estimates = np.asarray(local_estimates, dtype=float)
    if local_estimates.shape[0] < 1:
        raise ConfigurationError("at least one local estimate is required")
    return local_estimates.sum(axis=0) / local_estimates.shape[0]


def sw_rls_global(local_estimates, phis) -> np.ndarray:
    """Precision-weighted mean (sum phi_n^{-1})^{-1} sum phi_n^{-1} theta_n.

    Raises
    ------
    ConditioningError
        Some phi_n is singular; the error names the first offending agent.
    """
    local_estimates = np.asarray(local_estimates, dtype=float)
    phis = np.asarray(phis, dtype=float)
    ev = np.linalg.eigvalsh(phis)
    singular = ~(ev[:, 0] > np.finfo(float).eps * np.abs(ev[:, -1]))
    if np.any(singular):
        raise ConditioningError("phi is singular, cannot weight its estimate",
                                agent=int(np.argmax(singular)))
    W = np.linalg.inv(phis)
    info = W.sum(axis=0)
    vec = np.einsum("nij,nj->i", W, local_estimates)
    try:
        return np.linalg.solve(info, vec)
    except np.linalg.LinAlgError:
        raise ConditioningError("summed precision matrix is singular") from None


def mixed_step(theta_g_prev, phi, X, y, lam, *, weighted: bool):
    """M-RLS (``weighted=False``) or MW-RLS (``weighted=True``) step.

    Every agent starts its update from ``theta_g_prev`` instead of its own
    previous estimate; the updated local estimates are then recombined.

    Returns (local_estimates, phi_new, theta_g).
    """
    phi = np.asarray(phi, dtype=float)
    prior = np.broadcast_to(np.asarray(theta_g_prev, dtype=float), phi.shape[:-1])
    theta, phi_new = classical_rls_step(prior, phi, X, y, lam)
    theta_g = sw_rls_global(theta, phi_new) if weighted else s_rls_global(theta)
    return theta, phi_new, theta_g
