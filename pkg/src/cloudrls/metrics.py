"""Accuracy and noise-level metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Metrics",
    "VIOLATION_TOLERANCE",
    "count_violations",
    "evaluate",
    "rmse_global",
    "rmse_local",
    "snr",
]

VIOLATION_TOLERANCE = 1e-4


def snr(outputs, noises) -> np.ndarray:
    """Signal-to-noise ratio in dB, 10 log10(sum (y - e)^2 / sum e^2) along axis 0.

    Returns ``+inf`` where the noise energy is zero.
    """
    y = np.asarray(outputs, dtype=float)
    e = np.asarray(noises, dtype=float)
    if y.shape != e.shape:
        raise ValueError(f"outputs {y.shape} and noises {e.shape} differ in shape")
    signal = np.sum((y - e) ** 2, axis=0)
    noise = np.sum(e ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(signal / noise)
    return np.where(noise == 0, np.inf, out)


def rmse_global(theta_true, estimates) -> tuple[np.ndarray, float]:
    """Per-component RMSE over time of a global estimate, and its Euclidean norm.

    ``theta_true`` is (T, n_g) or a constant (n_g,); ``estimates`` is (T, n_g).
    """
    est = np.asarray(estimates, dtype=float)
    err = np.broadcast_to(np.asarray(theta_true, dtype=float), est.shape) - est
    per = np.sqrt(np.mean(err ** 2, axis=0))
    return per, float(np.linalg.norm(per))


def rmse_local(theta_true, estimates) -> np.ndarray:
    """(N, n_theta) RMSE over time of local estimates (T, N, n_theta)."""
    est = np.asarray(estimates, dtype=float)
    err = np.broadcast_to(np.asarray(theta_true, dtype=float), est.shape) - est
    return np.sqrt(np.mean(err ** 2, axis=0))


def count_violations(estimates, lower, upper, tol: float = VIOLATION_TOLERANCE):
    """Steps at which local estimates leave [lower - tol, upper + tol].

    Parameters
    ----------
    estimates : ndarray (T, N, n_theta)
    lower, upper : ndarray broadcasting to (N, n_theta)

    Returns
    -------
    counts : ndarray (N, n_theta) of ints
    average_pct : ndarray (n_theta,)
        Mean over agents of ``counts / T``, in percent.
    """
    est = np.asarray(estimates, dtype=float)
    outside = (est < np.asarray(lower)[None] - tol) | (est > np.asarray(upper)[None] + tol)
    counts = outside.sum(axis=0)
    return counts, 100.0 * counts.mean(axis=0) / est.shape[0]


@dataclass(frozen=True)
class Metrics:
    rmse_global: np.ndarray
    rmse_norm: float
    rmse_local: np.ndarray | None
    snr: np.ndarray
    violations: np.ndarray | None = None
    violation_pct: np.ndarray | None = None


def evaluate(result, data) -> Metrics:
    """Metrics of a :class:`~cloudrls.sim.RunResult` on its scenario data."""
    per, norm = rmse_global(result.theta_g_true, result.theta_global)
    local = None
    if np.all(np.isfinite(result.theta_fused)):
        local = rmse_local(result.theta_true, result.theta_fused)
    viol = pct = None
    if result.lower is not None and local is not None:
        viol, pct = count_violations(result.theta_fused, result.lower, result.upper)
    return Metrics(per, norm, local, snr(data.y, data.e), viol, pct)
