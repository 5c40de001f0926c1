"""Numerical primitives shared by every estimator.

ARX regressor construction, extended regressor/measurement construction and
the matrix-inversion-lemma recursions for the gain and the matrix ``phi``
(inverse of the regularized, exponentially weighted information matrix).

The recursions accept arrays with leading batch axes so that a fleet of
agents can be advanced in one call; a single agent is the unbatched case.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from cloudrls.errors import ConditioningError, ConfigurationError, WarmUpError
from cloudrls.modes import ConsensusMode, Penalties

__all__ = [
    "ArxModelSpec",
    "ConditioningError",
    "ConfigurationError",
    "ExtendedSample",
    "RlsState",
    "Sample",
    "WarmUpError",
    "build_arx_regressor",
    "arx_regressors",
    "extend_sample",
    "extended_regressor",
    "gain_update",
    "local_rls_update",
    "rls_step",
]


@dataclass(frozen=True)
class ArxModelSpec:
    """ARX model orders, shared by all agents of a scenario.

    y(t) = a_1 y(t-1) + ... + a_na y(t-na) + b_1 u(t-nk-1) + ... + b_nb u(t-nk-nb) + e(t)
    """

    n_a: int
    n_b: int
    n_k: int = 0
    n_y: int = 1
    n_u: int = 1

    def __post_init__(self):
        if self.n_a < 0 or self.n_b < 1 or self.n_k < 0 or self.n_y < 1 or self.n_u < 1:
            raise ConfigurationError(
                f"invalid ARX orders n_a={self.n_a}, n_b={self.n_b}, n_k={self.n_k}, "
                f"n_y={self.n_y}, n_u={self.n_u}"
            )

    @property
    def n_theta(self) -> int:
        return self.n_a * self.n_y + self.n_b * self.n_u

    @property
    def input_lags(self) -> int:
        return self.n_k + self.n_b


@dataclass(frozen=True)
class Sample:
    """One time step of data: output ``y`` (n_y,) and regressor ``X`` (n_theta, n_y)."""

    y: np.ndarray
    X: np.ndarray
    t: int

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != y.shape[0]:
            raise ConfigurationError(f"regressor shape {X.shape} does not match output length {y.shape[0]}")
        if self.t < 1:
            raise ConfigurationError(f"time index must be >= 1, got {self.t}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)


@dataclass(frozen=True)
class ExtendedSample:
    """Extended regressor ``X`` (n_theta, m) and zero-padded measurement ``y`` (m,)."""

    X: np.ndarray
    y: np.ndarray


@dataclass
class RlsState:
    """Recursive estimator state owned by one agent."""

    theta: np.ndarray
    phi: np.ndarray
    lam: float = 1.0
    t: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if not 0.0 < self.lam <= 1.0:
            raise ConfigurationError(f"forgetting factor must lie in (0, 1], got {self.lam}")
        n = self.theta.shape[-1]
        if self.phi.shape[-2:] != (n, n):
            raise ConfigurationError(f"phi shape {self.phi.shape} does not match n_theta={n}")

    @classmethod
    def initial(cls, theta0, gamma: float = 0.1, lam: float = 1.0) -> RlsState:
        """State at t=0 with ``phi(0) = gamma * I``."""
        if not gamma > 0:
            raise ConfigurationError(f"phi(0) scale must be > 0, got {gamma}")
        theta0 = np.asarray(theta0, dtype=float)
        return cls(theta=theta0.copy(), phi=gamma * np.eye(theta0.shape[-1]), lam=lam)


def build_arx_regressor(
    spec: ArxModelSpec,
    past_outputs: Sequence,
    past_inputs: Sequence,
) -> np.ndarray:
    """Stack past outputs and delayed inputs into the (n_theta, n_y) regressor.

    Histories are ordered most recent first: ``past_outputs[0]`` is y(t-1) and
    ``past_inputs[0]`` is u(t-1). The stacking order is
    [y(t-1)' ... y(t-n_a)' u(t-n_k-1)' ... u(t-n_k-n_b)']'.

    Raises
    ------
    WarmUpError
        Fewer than ``n_a`` outputs or ``n_k + n_b`` inputs are available.
    """
    if len(past_outputs) < spec.n_a or len(past_inputs) < spec.input_lags:
        raise WarmUpError(
            f"need {spec.n_a} past outputs and {spec.input_lags} past inputs, "
            f"got {len(past_outputs)} and {len(past_inputs)}"
        )
    if spec.n_y != 1:
        raise ConfigurationError("ARX regressors are built for scalar outputs only; pass X directly")
    blocks = [np.asarray(past_outputs[i], dtype=float).reshape(1) for i in range(spec.n_a)]
    blocks += [np.asarray(past_inputs[i], dtype=float).reshape(spec.n_u)
               for i in range(spec.n_k, spec.input_lags)]
    return np.concatenate(blocks)[:, None]


def arx_regressors(spec: ArxModelSpec, y_hist: np.ndarray, u_hist: np.ndarray) -> np.ndarray:
    """Batched form of :func:`build_arx_regressor` for scalar signals.

    ``y_hist`` (N, >= n_a) and ``u_hist`` (N, >= n_k + n_b, n_u) or
    (N, >= n_k + n_b) hold each agent's history, most recent first.
    Returns regressors of shape (N, n_theta, 1).
    """
    u_hist = np.asarray(u_hist, dtype=float)
    if u_hist.ndim == 2:
        u_hist = u_hist[..., None]
    n = y_hist.shape[0]
    lagged_u = u_hist[:, spec.n_k: spec.input_lags, :].reshape(n, -1)
    return np.concatenate([y_hist[:, : spec.n_a], lagged_u], axis=1)[..., None]


def extended_regressor(X, lam, mode: ConsensusMode, penalties: Penalties) -> np.ndarray:
    """Append the penalty block sqrt(1 - lam) * B to the regressor.

    ``X`` has shape (..., n_theta, n_y) and ``lam`` broadcasts against the
    leading axes. With ``lam = 1`` the appended block is exactly zero.
    """
    X = np.asarray(X, dtype=float)
    n_theta = X.shape[-2]
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0) or np.any(lam > 1):
        raise ConfigurationError(f"forgetting factor must lie in (0, 1], got {lam}")
    aug = mode.augmentation(n_theta, penalties, lam)
    aug = np.broadcast_to(aug, X.shape[:-2] + aug.shape[-2:]) if aug.ndim < X.ndim else aug
    if aug.shape[:-2] != X.shape[:-2]:
        X = np.broadcast_to(X, aug.shape[:-2] + X.shape[-2:])
    return np.concatenate([X, aug], axis=-1)


def extend_sample(
    sample: Sample,
    mode: ConsensusMode,
    lam: float,
    penalties: Penalties | None = None,
) -> ExtendedSample:
    """Build the extended regressor and the zero-padded extended measurement.

    Widths: full n_y + n_theta, partial n_y + n_g, constrained
    n_y + n_theta + n_g.
    """
    penalties = penalties or Penalties()
    n_theta = sample.X.shape[0]
    mode.selector(n_theta)  # dimension check
    X_ext = extended_regressor(sample.X, lam, mode, penalties)
    y_ext = np.zeros(X_ext.shape[-1])
    y_ext[: sample.y.shape[0]] = sample.y
    return ExtendedSample(X=X_ext, y=y_ext)


def gain_update(phi, X_ext, lam):
    """Matrix-inversion-lemma step for the gain and ``phi``.

    R = lam I + X' phi X,  K = phi X R^{-1},  phi_new = (I - K X') phi / lam,
    followed by symmetrization of ``phi_new``.

    Parameters
    ----------
    phi : ndarray, shape (..., n_theta, n_theta)
    X_ext : ndarray, shape (..., n_theta, m)
        Extended (or plain) regressor.
    lam : float or ndarray broadcasting against the leading axes

    Returns
    -------
    K : ndarray, shape (..., n_theta, m)
    phi_new : ndarray, shape (..., n_theta, n_theta)
    """
    phi = np.asarray(phi, dtype=float)
    X_ext = np.asarray(X_ext, dtype=float)
    lam = np.asarray(lam, dtype=float)
    m = X_ext.shape[-1]
    Xt = np.swapaxes(X_ext, -1, -2)
    phiX = phi @ X_ext
    R = Xt @ phiX + lam[..., None, None] * np.eye(m)
    try:
        # R and phi are symmetric, so K' = R^{-1} X' phi.
        K = np.swapaxes(np.linalg.solve(R, np.swapaxes(phiX, -1, -2)), -1, -2)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"innovation matrix R is singular: {exc}") from None
    if not np.all(np.isfinite(K)):
        raise ConditioningError("gain is not finite; innovation matrix R is ill-conditioned")
    phi_new = (phi - K @ np.swapaxes(phiX, -1, -2)) / lam[..., None, None]
    phi_new = 0.5 * (phi_new + np.swapaxes(phi_new, -1, -2))
    return K, phi_new


def local_rls_update(K, X_ext, y_ext, theta_prev) -> np.ndarray:
    """theta_rls = theta_prev + K (y_ext - X_ext' theta_prev).

    ``theta_prev`` must be the fused estimate returned by the cloud at t-1.
    """
    theta_prev = np.asarray(theta_prev, dtype=float)
    pred = np.einsum("...im,...i->...m", X_ext, theta_prev)
    innov = np.asarray(y_ext, dtype=float) - pred
    return theta_prev + np.einsum("...im,...m->...i", K, innov)


def rls_step(state: RlsState, ext: ExtendedSample, theta_prev=None) -> tuple[RlsState, np.ndarray]:
    """Advance one agent: gain/phi update followed by the local estimate update.

    Returns the new state (whose ``theta`` is the local RLS estimate) and the gain.
    """
    K, phi_new = gain_update(state.phi, ext.X, state.lam)
    prior = state.theta if theta_prev is None else theta_prev
    theta = local_rls_update(K, ext.X, ext.y, prior)
    return RlsState(theta=theta, phi=phi_new, lam=state.lam, t=state.t + 1), K
