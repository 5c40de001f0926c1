"""Consensus modes and ADMM penalty parameters."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from cloudrls.errors import ConfigurationError


class Variant(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"
    CONSTRAINED = "constrained"


@dataclass(frozen=True)
class Penalties:
    """ADMM penalties.

    ``rho`` is used by full and partial consensus. Constrained consensus uses
    ``rho1`` for the box constraint and ``rho2`` for the consensus constraint.
    """

    rho: float = 0.1
    rho1: float = 10.0
    rho2: float = 0.1

    def __post_init__(self):
        for name in ("rho", "rho1", "rho2"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"penalty {name} must be > 0, got {getattr(self, name)}")

    def consensus(self, variant: Variant) -> float:
        """Penalty attached to the consensus constraint for ``variant``."""
        return self.rho2 if variant is Variant.CONSTRAINED else self.rho


@dataclass(frozen=True, eq=False)
class ConsensusMode:
    """Which consensus constraint links the agents to the global estimate.

    Attributes
    ----------
    variant : Variant
    P : ndarray or None
        (n_g, n_theta) map from local to global parameters. ``None`` for full
        consensus, where it is treated as the identity.
    lower, upper : ndarray or None
        Box bounds for constrained consensus, shape (n_theta,) for a box shared
        by every agent or (N, n_theta) for per-agent boxes.
    """

    variant: Variant
    P: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.variant is Variant.FULL:
            if self.P is not None or self.lower is not None or self.upper is not None:
                raise ConfigurationError("full consensus takes no selection matrix or boxes")
            return
        if self.P is None:
            raise ConfigurationError(f"{self.variant.value} consensus requires a selection matrix P")
        P = np.array(self.P, dtype=float, ndmin=2)
        if P.ndim != 2:
            raise ConfigurationError(f"P must be a matrix, got shape {P.shape}")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        if self.variant is Variant.PARTIAL:
            if self.lower is not None or self.upper is not None:
                raise ConfigurationError("partial consensus takes no boxes; use constrained")
            return
        if self.lower is None or self.upper is None:
            raise ConfigurationError("constrained consensus requires lower and upper bounds")
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.shape[-1] != P.shape[1]:
            raise ConfigurationError(
                f"box bounds must share shape (..., {P.shape[1]}); got {lo.shape} and {hi.shape}"
            )
        bad = np.argwhere(lo > hi)
        if bad.size:
            raise ConfigurationError(f"lower bound exceeds upper bound at index {tuple(bad[0])}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def full(cls) -> ConsensusMode:
        return cls(Variant.FULL)

    @classmethod
    def partial(cls, P) -> ConsensusMode:
        return cls(Variant.PARTIAL, P=P)

    @classmethod
    def constrained(cls, P, lower, upper) -> ConsensusMode:
        return cls(Variant.CONSTRAINED, P=P, lower=lower, upper=upper)

    def selector(self, n_theta: int) -> np.ndarray:
        """The consensus map P, with the identity standing in for full mode."""
        if self.P is None:
            return np.eye(n_theta)
        if self.P.shape[1] != n_theta:
            raise ConfigurationError(
                f"P has {self.P.shape[1]} columns but the model has n_theta={n_theta}"
            )
        return self.P

    def n_global(self, n_theta: int) -> int:
        return self.selector(n_theta).shape[0]

    def penalty_root(self, n_theta: int, penalties: Penalties) -> np.ndarray:
        """Matrix B with B @ B.T equal to the ADMM regularizer of the local problem.

        Full: sqrt(rho) I, partial: sqrt(rho) P', constrained:
        [sqrt(rho1) I, sqrt(rho2) P'].  The extended regressor appends
        ``sqrt(1 - lam) * B`` to the data regressor.
        """
        return self._root(n_theta, penalties, 1.0)

    def augmentation(self, n_theta: int, penalties: Penalties, lam) -> np.ndarray:
        """Penalty-scaled block appended to the regressor for forgetting factor ``lam``.

        ``lam`` may be a scalar or an array of per-agent factors; the result then
        carries a matching leading axis.
        """
        lam = np.asarray(lam, dtype=float)
        return self._root(n_theta, penalties, 1.0 - lam)

    def _root(self, n_theta, penalties, weight):
        weight = np.asarray(weight, dtype=float)[..., None, None]
        eye = np.eye(n_theta)
        if self.variant is Variant.FULL:
            return np.sqrt(weight * penalties.rho) * eye
        Pt = self.selector(n_theta).T
        if self.variant is Variant.PARTIAL:
            return np.sqrt(weight * penalties.rho) * Pt
        box = np.sqrt(weight * penalties.rho1) * eye
        cons = np.sqrt(weight * penalties.rho2) * Pt
        return np.concatenate([box, cons], axis=-1)

    def regularizer(self, n_theta: int, penalties: Penalties) -> np.ndarray:
        """rho I, rho P'P or rho1 I + rho2 P'P."""
        B = self.penalty_root(n_theta, penalties)
        return B @ B.T

    def bounds(self, n_agents: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-agent (N, n_theta) lower and upper bounds."""
        if self.variant is not Variant.CONSTRAINED:
            raise ConfigurationError("only constrained consensus carries boxes")
        lo = np.broadcast_to(self.lower, (n_agents, self.lower.shape[-1]))
        hi = np.broadcast_to(self.upper, (n_agents, self.upper.shape[-1]))
        return lo, hi
