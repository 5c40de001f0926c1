"""Cloud-side consensus ADMM for full, partial and box-constrained consensus.

All per-agent quantities are stacked along a leading agent axis of length N:
local estimates (N, n_theta), phi matrices (N, n_theta, n_theta), consensus
duals (N, n_g), box duals and auxiliary variables (N, n_theta). Reductions
over agents run in fixed index order, so results do not depend on how the
per-agent work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from cloudrls.errors import ConditioningError, ConfigurationError
from cloudrls.modes import ConsensusMode, Penalties, Variant

__all__ = [
    "AdmmSettings",
    "CloudSnapshot",
    "CloudState",
    "IterationReport",
    "admm_correction",
    "cloud_iterate",
    "dual_update",
    "fuse_local",
    "global_update",
    "initial_cloud_state",
    "primal_residual",
    "project_box",
]


@dataclass(frozen=True)
class AdmmSettings:
    """Inner-loop stopping rule: ``max_iters`` global/dual updates or primal residual <= ``primal_tol``."""

    mode: ConsensusMode = field(default_factory=ConsensusMode.full)
    penalties: Penalties = field(default_factory=Penalties)
    max_iters: int = 50
    primal_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.primal_tol < 0:
            raise ConfigurationError(f"primal_tol must be >= 0, got {self.primal_tol}")


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CloudSnapshot:
    """Cloud variables converged at the previous time step (read-only arrays)."""

    theta_g: np.ndarray
    dual: np.ndarray
    dual_box: np.ndarray | None = None
    z: np.ndarray | None = None

    def __post_init__(self):
        for name in ("theta_g", "dual", "dual_box", "z"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass
class CloudState:
    """Global estimate, duals and auxiliary variables held by the cloud.

    ``dual`` is the consensus multiplier (delta, or delta_2 in constrained
    mode). ``dual_box`` (delta_1) and ``z`` only exist in constrained mode.
    ``prev`` is the snapshot taken at the end of the previous time step.
    """

    theta_g: np.ndarray
    dual: np.ndarray
    prev: CloudSnapshot
    dual_box: np.ndarray | None = None
    z: np.ndarray | None = None
    k: int = 0

    @property
    def n_agents(self) -> int:
        return self.dual.shape[0]

    def snapshot(self) -> CloudSnapshot:
        return CloudSnapshot(theta_g=self.theta_g, dual=self.dual, dual_box=self.dual_box, z=self.z)

    def copy(self) -> CloudState:
        cp = lambda a: None if a is None else np.array(a, dtype=float)
        return CloudState(
            theta_g=cp(self.theta_g), dual=cp(self.dual), prev=self.prev,
            dual_box=cp(self.dual_box), z=cp(self.z), k=self.k,
        )


@dataclass(frozen=True)
class IterationReport:
    """Diagnostics of one cloud inner loop."""

    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool


def project_box(v, lower, upper) -> np.ndarray:
    """Euclidean projection onto the box [lower, upper] (elementwise clamp)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        bad = tuple(np.argwhere(np.broadcast_to(lower > upper, np.broadcast_shapes(lower.shape, upper.shape)))[0])
        raise ConfigurationError(f"box lower bound exceeds upper bound at index {bad}")
    return np.minimum(np.maximum(np.asarray(v, dtype=float), lower), upper)


def initial_cloud_state(
    n_agents: int,
    n_theta: int,
    mode: ConsensusMode,
    theta_g0,
    theta_local0=None,
    dual0=None,
    dual_box0=None,
    z0=None,
) -> CloudState:
    """Cloud state at t=0.

    Duals default to zero. In constrained mode the auxiliary variables default
    to the projection of the initial local estimates onto each agent's box.
    The returned state's ``prev`` equals its current values.
    """
    n_g = mode.n_global(n_theta)
    theta_g = np.array(theta_g0, dtype=float).reshape(n_g)
    dual = np.zeros((n_agents, n_g)) if dual0 is None else np.array(dual0, dtype=float).reshape(n_agents, n_g)
    dual_box = z = None
    if mode.variant is Variant.CONSTRAINED:
        dual_box = (np.zeros((n_agents, n_theta)) if dual_box0 is None
                    else np.array(dual_box0, dtype=float).reshape(n_agents, n_theta))
        if z0 is None:
            if theta_local0 is None:
                raise ConfigurationError("constrained mode needs initial local estimates or z0")
            lo, hi = mode.bounds(n_agents)
            z = project_box(np.broadcast_to(theta_local0, (n_agents, n_theta)), lo, hi)
        else:
            z = np.array(z0, dtype=float).reshape(n_agents, n_theta)
    state = CloudState(theta_g=theta_g, dual=dual, prev=None, dual_box=dual_box, z=z)  # type: ignore[arg-type]
    state.prev = state.snapshot()
    return state


def _lam_col(lam, n_agents):
    return np.broadcast_to(np.asarray(lam, dtype=float), (n_agents,))[:, None]


def admm_correction(phi, lam, cloud: CloudState, mode: ConsensusMode, penalties: Penalties) -> np.ndarray:
    """Cloud-side correction term added to each agent's local RLS estimate.

    Full:        phi (rho Dg - Dd)
    Partial:     phi P' (rho Dg - Dd)
    Constrained: phi (rho1 Dz + rho2 P' Dg - D1 - P' D2)

    where every D term is (current iterate) - lam * (value at t-1), e.g.
    Dg = theta_g^(k) - lam theta_g(t-1).

    Returns an (N, n_theta) array.
    """
    phi = np.asarray(phi, dtype=float)
    n_agents, n_theta = phi.shape[0], phi.shape[-1]
    lam = _lam_col(lam, n_agents)
    prev = cloud.prev
    d_g = cloud.theta_g[None, :] - lam * prev.theta_g[None, :]
    d_dual = cloud.dual - lam * prev.dual
    if mode.variant is Variant.FULL:
        rhs = penalties.rho * d_g - d_dual
    elif mode.variant is Variant.PARTIAL:
        rhs = (penalties.rho * d_g - d_dual) @ mode.selector(n_theta)
    else:
        P = mode.selector(n_theta)
        d_z = cloud.z - lam * prev.z
        d_box = cloud.dual_box - lam * prev.dual_box
        rhs = penalties.rho1 * d_z + (penalties.rho2 * d_g - d_dual) @ P - d_box
    return np.einsum("nij,nj->ni", phi, rhs)


def fuse_local(theta_rls, theta_admm) -> np.ndarray:
    """Fused local estimate: RLS part plus ADMM correction."""
    return np.asarray(theta_rls, dtype=float) + np.asarray(theta_admm, dtype=float)


def global_update(local_estimates, duals, rho: float, P=None) -> np.ndarray:
    """theta_g = mean over agents of (P theta_n + delta_n / rho)."""
    local_estimates = np.asarray(local_estimates, dtype=float)
    mapped = local_estimates if P is None else local_estimates @ np.asarray(P, dtype=float).T
    terms = mapped + np.asarray(duals, dtype=float) / rho
    # np.sum over the agent axis of a fixed-layout array is order-deterministic.
    return terms.sum(axis=0) / terms.shape[0]


def dual_update(duals, residuals, rho: float) -> np.ndarray:
    """Scaled gradient ascent: delta + rho * residual.

    ``residuals`` is P theta_n - theta_g for a consensus dual, or
    theta_n - z_n for a box dual.
    """
    return np.asarray(duals, dtype=float) + rho * np.asarray(residuals, dtype=float)


def primal_residual(local_estimates, theta_g, mode: ConsensusMode, z=None) -> float:
    """max_n ||P theta_n - theta_g||, and also ||theta_n - z_n|| in constrained mode."""
    local_estimates = np.asarray(local_estimates, dtype=float)
    P = mode.selector(local_estimates.shape[-1])
    res = float(np.max(np.linalg.norm(local_estimates @ P.T - theta_g[None, :], axis=1)))
    if z is not None:
        res = max(res, float(np.max(np.linalg.norm(local_estimates - z, axis=1))))
    return res


def cloud_iterate(
    cloud: CloudState,
    theta_rls,
    phi,
    lam,
    settings: AdmmSettings,
    *,
    projector: Callable | None = None,
    t: int | None = None,
) -> tuple[np.ndarray, CloudState, IterationReport]:
    """Run the inner ADMM loop for one time step.

    Each iteration performs correction, fuse, (z projection), global update and
    dual update(s), in that order. The loop starts warm from the values at t-1
    and stops after ``settings.max_iters`` iterations or as soon as the primal
    residual of the current fused estimates drops to ``settings.primal_tol``.

    The fused estimates returned to the agents are always computed from the
    final cloud variables, and those same variables become the snapshot used
    at t+1. This keeps the decomposition into an RLS part and a correction
    exact across time steps.

    Parameters
    ----------
    cloud : CloudState
        State at the end of t-1 (not modified).
    theta_rls : ndarray (N, n_theta)
        Local RLS estimates received from the agents for this step.
    phi : ndarray (N, n_theta, n_theta)
        The agents' updated phi matrices.
    lam : float or ndarray (N,)
    settings : AdmmSettings
    projector : callable, optional
        ``projector(v, agent_lower, agent_upper)``; defaults to the box
        projection. Only used in constrained mode.

    Returns
    -------
    fused : ndarray (N, n_theta)
    state : CloudState
        New state whose ``prev`` is its own snapshot, ready for t+1.
    report : IterationReport
    """
    mode, pen = settings.mode, settings.penalties
    theta_rls = np.asarray(theta_rls, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n_agents, n_theta = theta_rls.shape
    if cloud.n_agents != n_agents:
        raise ConfigurationError(f"cloud holds {cloud.n_agents} agents but {n_agents} payloads arrived")
    bad_in = ~(np.isfinite(theta_rls).all(axis=1) & np.isfinite(phi).all(axis=(1, 2)))
    if np.any(bad_in):
        raise ConditioningError("agent payload is not finite", agent=int(np.argmax(bad_in)), t=t, k=0)
    P = None if mode.variant is Variant.FULL else mode.selector(n_theta)
    rho_g = pen.consensus(mode.variant)
    constrained = mode.variant is Variant.CONSTRAINED
    if constrained:
        lo, hi = mode.bounds(n_agents)
        project = projector or project_box

    state = cloud.copy()
    state.k = 0
    lam_c = _lam_col(lam, n_agents)

    # The correction is phi (c(k) - lam c(t-1)) with c linear in the cloud
    # variables, so the t-1 part is folded into a per-step offset.
    def drive(g, dual, z, dual_box):
        c = rho_g * g[None, :] - dual
        if P is not None:
            c = c @ P
        if constrained:
            c = c + pen.rho1 * z - dual_box
        return c

    prev = state.prev
    offset = theta_rls - np.matmul(phi, (lam_c * drive(prev.theta_g, prev.dual, prev.z, prev.dual_box))[..., None])[..., 0]

    def fuse(st):
        return offset + np.matmul(phi, drive(st.theta_g, st.dual, st.z, st.dual_box)[..., None])[..., 0]

    def residual_of(f, st):
        d = (f if P is None else f @ P.T) - st.theta_g[None, :]
        r = float(np.max(np.einsum("ni,ni->n", d, d)))
        if constrained:
            dz = f - st.z
            r = max(r, float(np.max(np.einsum("ni,ni->n", dz, dz))))
        return np.sqrt(r)

    fused = fuse(state)
    residual = residual_of(fused, state)
    dual_res = 0.0
    converged = residual <= settings.primal_tol
    iters = 0
    while not converged and iters < settings.max_iters:
        if constrained:
            z_new = project(fused + state.dual_box / pen.rho1, lo, hi)
        g_new = global_update(fused, state.dual, rho_g, P)
        if constrained:
            state.dual_box = dual_update(state.dual_box, fused - z_new, pen.rho1)
            state.z = z_new
        mapped = fused if P is None else fused @ P.T
        state.dual = dual_update(state.dual, mapped - g_new[None, :], rho_g)
        dg = g_new - state.theta_g
        dual_res = float(np.sqrt(dg @ dg))
        state.theta_g = g_new
        iters += 1
        state.k = iters
        fused = fuse(state)
        residual = residual_of(fused, state)
        converged = residual <= settings.primal_tol
    if not np.isfinite(residual) or not np.all(np.isfinite(fused)):
        bad = int(np.argwhere(~np.isfinite(fused))[0][0]) if not np.all(np.isfinite(fused)) else None
        raise ConditioningError("cloud iterates are not finite", agent=bad, t=t, k=iters)
    state.prev = state.snapshot()
    return fused, state, IterationReport(iters, residual, dual_res, converged)


def with_prev(cloud: CloudState, prev: CloudSnapshot) -> CloudState:
    """Copy of ``cloud`` with a different t-1 snapshot."""
    return replace(cloud.copy(), prev=prev)
