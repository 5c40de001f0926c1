"""Synthetic multi-agent ARX scenarios.

A :class:`ScenarioConfig` describes N scalar-output ARX systems, their true
parameters (static, sinusoidal or global-plus-local), input and noise laws,
anomalous agents and solver settings. :func:`generate` turns a config into
a :class:`ScenarioData` bundle that every estimator replays unchanged.

Random draws use independent child streams of one ``numpy.random.SeedSequence``
so that, for example, changing the anomaly settings leaves the noise
realisation untouched.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from cloudrls.admm import AdmmSettings
from cloudrls.core import ArxModelSpec, Sample
from cloudrls.errors import ConfigurationError
from cloudrls.modes import ConsensusMode, Penalties

__all__ = [
    "AnomalySpec",
    "MAGNITUDE_GUARD",
    "PRESETS",
    "ScenarioConfig",
    "ScenarioData",
    "SolverSpec",
    "UnstableScenarioWarning",
    "generate",
    "preset",
]

MAGNITUDE_GUARD = 1e9

LAWS = ("static", "sinusoid", "mixed")
CONSENSUS = ("full", "partial", "constrained")


class UnstableScenarioWarning(RuntimeWarning):
    """Generated outputs exceeded the magnitude guard."""


@dataclass(frozen=True)
class AnomalySpec:
    """Non-informative and failing agents.

    Non-informative agents get a null input and noise variance
    ``noninformative_variance``. Failing agents switch the leading
    ``len(failure_low)`` parameters, once, to values drawn uniformly in
    [failure_low, failure_high]. The switch time is a uniform integer in
    ``failure_window``, which is expressed for a horizon of
    ``failure_reference_horizon`` steps and rescaled proportionally otherwise.
    """

    n_noninformative: int = 0
    n_failures: int = 0
    noninformative_variance: float = 1e-8
    failure_window: tuple[int, int] = (1875, 3750)
    failure_reference_horizon: int = 5000
    failure_low: tuple[float, ...] = (0.2, 1.4)
    failure_high: tuple[float, ...] = (0.21, 1.43)


@dataclass(frozen=True)
class SolverSpec:
    """Estimator settings and initial-condition law.

    ``box_lower``/``box_upper`` (constrained consensus only) give one bound
    per parameter. For purely local parameters of a ``mixed`` law the bound
    is an offset from the agent's true value; otherwise it is absolute.
    """

    consensus: str = "full"
    P: tuple[tuple[float, ...], ...] | None = None
    box_lower: tuple[float, ...] | None = None
    box_upper: tuple[float, ...] | None = None
    rho: float = 0.1
    rho1: float = 10.0
    rho2: float = 0.1
    max_iters: int = 50
    tol: float = 1e-8
    phi0: float = 0.1
    theta0_var: float = 2.0
    g0_var: float = 1.0

    @property
    def penalties(self) -> Penalties:
        return Penalties(rho=self.rho, rho1=self.rho1, rho2=self.rho2)


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative description of one experiment.

    Parameter laws
    --------------
    static
        theta_n(t) = ``theta_g`` for every agent.
    sinusoid
        theta(t) = (a_1 sin x_t, a_2 cos x_t) with (a_1, a_2) = ``theta_g`` and
        x_t sweeping [0, 2 pi] uniformly over the horizon.
    mixed
        Components listed in ``local_index`` are drawn per agent from
        N(``local_mean``, ``local_var``); the remaining ones, in order, equal
        ``theta_g``.
    """

    name: str = "custom"
    n_agents: int = 100
    horizon: int = 1000
    model: ArxModelSpec = field(default_factory=lambda: ArxModelSpec(n_a=1, n_b=1))
    law: str = "static"
    theta_g: tuple[float, ...] = (0.9, 0.4)
    local_index: tuple[int, ...] = ()
    local_mean: float = 0.0
    local_var: float = 0.0
    input_low: float = 2.0
    input_high: float = 3.0
    noise_low: int = 1
    noise_high: int = 30
    lam: float = 1.0
    y0: float = 0.0
    anomalies: AnomalySpec = field(default_factory=AnomalySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    seed: int = 0

    def __post_init__(self):
        if self.n_agents < 1 or self.horizon < 1:
            raise ConfigurationError(f"need n_agents >= 1 and horizon >= 1, got {self.n_agents}, {self.horizon}")
        if self.model.n_y != 1:
            raise ConfigurationError("scenarios generate scalar-output systems only (n_y = 1)")
        if self.law not in LAWS:
            raise ConfigurationError(f"unknown parameter law {self.law!r}; expected one of {LAWS}")
        n_theta = self.model.n_theta
        n_shared = n_theta - len(self.local_index)
        if len(self.theta_g) != (n_theta if self.law != "mixed" else n_shared):
            raise ConfigurationError(f"theta_g has {len(self.theta_g)} entries for a {n_theta}-parameter model")
        if self.law == "sinusoid" and n_theta != 2:
            raise ConfigurationError("the sinusoid law is defined for two parameters")
        if self.law != "mixed" and self.local_index:
            raise ConfigurationError("local_index is only meaningful for the mixed law")
        if any(not 0 <= i < n_theta for i in self.local_index):
            raise ConfigurationError(f"local_index {self.local_index} out of range for n_theta={n_theta}")
        if self.local_var < 0:
            raise ConfigurationError("local_var must be >= 0")
        if not self.input_low <= self.input_high:
            raise ConfigurationError("input_low must not exceed input_high")
        if not 0 < self.noise_low <= self.noise_high:
            raise ConfigurationError(f"noise variances must be > 0, got [{self.noise_low}, {self.noise_high}]")
        if not 0 < self.lam <= 1:
            raise ConfigurationError(f"forgetting factor must lie in (0, 1], got {self.lam}")
        a = self.anomalies
        if a.n_noninformative < 0 or a.n_failures < 0 or a.n_noninformative + a.n_failures > self.n_agents:
            raise ConfigurationError(
                f"anomalous agents ({a.n_noninformative} non-informative, {a.n_failures} failing) "
                f"must be disjoint subsets of {self.n_agents} agents"
            )
        if not a.noninformative_variance > 0:
            raise ConfigurationError("noninformative_variance must be > 0")
        if a.n_failures:
            lo, hi = self.failure_window
            if not 1 <= lo <= hi:
                raise ConfigurationError(f"invalid failure window {self.failure_window}")
            if hi > self.horizon:
                raise ConfigurationError(
                    f"failure window {self.failure_window} exceeds the horizon T={self.horizon}"
                )
            if len(a.failure_low) != len(a.failure_high) or len(a.failure_low) > n_theta:
                raise ConfigurationError("failure bounds must share a length of at most n_theta")
        s = self.solver
        if s.consensus not in CONSENSUS:
            raise ConfigurationError(f"unknown consensus mode {s.consensus!r}; expected one of {CONSENSUS}")
        self.consensus_mode(np.zeros((self.n_agents, n_theta)))  # validates P and boxes
        AdmmSettings(penalties=s.penalties, max_iters=s.max_iters, primal_tol=s.tol)
        if not s.phi0 > 0 or s.theta0_var < 0 or s.g0_var < 0:
            raise ConfigurationError("phi0 must be > 0 and initial variances >= 0")

    @property
    def n_theta(self) -> int:
        return self.model.n_theta

    @property
    def failure_window(self) -> tuple[int, int]:
        """Failure window rescaled to this horizon."""
        a = self.anomalies
        scale = self.horizon / a.failure_reference_horizon
        lo = max(1, int(round(a.failure_window[0] * scale)))
        hi = max(lo, int(round(a.failure_window[1] * scale)))
        return lo, hi

    def selector(self) -> np.ndarray:
        n_theta = self.n_theta
        if self.solver.P is not None:
            return np.array(self.solver.P, dtype=float, ndmin=2)
        if self.law == "mixed":
            shared = [i for i in range(n_theta) if i not in self.local_index]
            return np.eye(n_theta)[shared]
        return np.eye(n_theta)

    def consensus_mode(self, theta_local: np.ndarray) -> ConsensusMode:
        """The consensus mode; per-agent boxes need the agents' true parameters."""
        s = self.solver
        if s.consensus == "full":
            if s.P is not None or self.law == "mixed":
                raise ConfigurationError("full consensus takes no P and cannot model local parameters")
            return ConsensusMode.full()
        P = self.selector()
        if s.consensus == "partial":
            return ConsensusMode.partial(P)
        if s.box_lower is None or s.box_upper is None:
            raise ConfigurationError("constrained consensus needs box_lower and box_upper")
        lo = np.broadcast_to(np.asarray(s.box_lower, dtype=float), theta_local.shape).copy()
        hi = np.broadcast_to(np.asarray(s.box_upper, dtype=float), theta_local.shape).copy()
        for i in self.local_index:
            lo[:, i] += theta_local[:, i]
            hi[:, i] += theta_local[:, i]
        return ConsensusMode.constrained(P, lo, hi)

    def admm_settings(self, theta_local: np.ndarray) -> AdmmSettings:
        s = self.solver
        return AdmmSettings(self.consensus_mode(theta_local), s.penalties, s.max_iters, s.tol)

    def with_overrides(self, **changes) -> ScenarioConfig:
        """Copy with top-level, ``solver.*`` or ``anomalies.*`` fields replaced."""
        top, solver, anomalies = {}, {}, {}
        for key, val in changes.items():
            if key.startswith("solver."):
                solver[key[7:]] = val
            elif key.startswith("anomalies."):
                anomalies[key[10:]] = val
            else:
                top[key] = val
        if solver:
            top["solver"] = replace(self.solver, **solver)
        if anomalies:
            top["anomalies"] = replace(self.anomalies, **anomalies)
        return replace(self, **top)


@dataclass(frozen=True)
class ScenarioData:
    """Everything an estimator consumes, plus the ground truth.

    Arrays are indexed by time step first: row ``t - 1`` holds step ``t``.
    """

    config: ScenarioConfig
    y: np.ndarray              # (T, N)
    u: np.ndarray              # (T, N)
    e: np.ndarray              # (T, N)
    X: np.ndarray              # (T, N, n_theta)
    theta_true: np.ndarray     # (T, N, n_theta)
    theta_g_true: np.ndarray   # (T, n_g)
    noise_var: np.ndarray      # (N,)
    lam: np.ndarray            # (N,)
    noninformative: np.ndarray  # agent indices
    failing: np.ndarray        # agent indices
    failure_times: np.ndarray  # switch step per failing agent
    theta0: np.ndarray         # (N, n_theta) initial local estimates
    theta_g0: np.ndarray       # (n_g,) initial global estimate
    mode: ConsensusMode
    settings: AdmmSettings

    @property
    def n_agents(self) -> int:
        return self.y.shape[1]

    @property
    def horizon(self) -> int:
        return self.y.shape[0]

    @property
    def n_theta(self) -> int:
        return self.X.shape[2]

    def stream(self, agent: int) -> list[Sample]:
        """The agent's samples for t = 1..T."""
        return [Sample(y=self.y[t, agent], X=self.X[t, agent], t=t + 1) for t in range(self.horizon)]


def _true_parameters(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    T, N, n_theta = cfg.horizon, cfg.n_agents, cfg.n_theta
    if cfg.law == "static":
        g = np.broadcast_to(np.asarray(cfg.theta_g, dtype=float), (T, n_theta)).copy()
        return np.broadcast_to(g[:, None, :], (T, N, n_theta)).copy(), g
    if cfg.law == "sinusoid":
        x = np.linspace(0.0, 2 * math.pi, T)
        a1, a2 = cfg.theta_g
        g = np.stack([a1 * np.sin(x), a2 * np.cos(x)], axis=1)
        return np.broadcast_to(g[:, None, :], (T, N, n_theta)).copy(), g
    shared = [i for i in range(n_theta) if i not in cfg.local_index]
    per_agent = np.empty((N, n_theta))
    per_agent[:, shared] = cfg.theta_g
    per_agent[:, list(cfg.local_index)] = rng.normal(
        cfg.local_mean, math.sqrt(cfg.local_var), (N, len(cfg.local_index)))
    g = np.broadcast_to(np.asarray(cfg.theta_g, dtype=float), (T, len(shared))).copy()
    return np.broadcast_to(per_agent, (T, N, n_theta)).copy(), g


def generate(cfg: ScenarioConfig) -> ScenarioData:
    """Draw a scenario realisation; identical configs give identical data."""
    T, N, n_theta, spec = cfg.horizon, cfg.n_agents, cfg.n_theta, cfg.model
    r_var, r_input, r_noise, r_params, r_anom, r_init = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6))

    noise_var = r_var.integers(cfg.noise_low, cfg.noise_high + 1, N).astype(float)
    u = r_input.uniform(cfg.input_low, cfg.input_high, (T, N))
    std_normal = r_noise.standard_normal((T, N))
    theta_true, theta_g_true = _true_parameters(cfg, r_params)

    a = cfg.anomalies
    order = r_anom.permutation(N)
    noninformative = np.sort(order[: a.n_noninformative])
    failing = np.sort(order[a.n_noninformative: a.n_noninformative + a.n_failures])
    lam = np.full(N, cfg.lam)
    failure_times = np.zeros(0, dtype=int)
    if a.n_failures:
        lo, hi = cfg.failure_window
        failure_times = r_anom.integers(lo, hi + 1, a.n_failures)
        k = len(a.failure_low)
        new = r_anom.uniform(a.failure_low, a.failure_high, (a.n_failures, k))
        for n, t_f, val in zip(failing, failure_times, new):
            theta_true[t_f - 1:, n, :k] = val
    u[:, noninformative] = 0.0
    noise_var[noninformative] = a.noninformative_variance
    e = std_normal * np.sqrt(noise_var)

    # Zero-padded history: y(t) = y0 at t = 0 and 0 before, u(t) = 0 for t <= 0.
    lag = max(spec.n_a, spec.input_lags, 1)
    y_pad = np.zeros((T + lag, N))
    y_pad[lag - 1] = cfg.y0
    u_pad = np.zeros((T + lag, N))
    u_pad[lag:] = u
    X = np.empty((T, N, n_theta))
    for t in range(T):
        row = lag + t
        X[t, :, : spec.n_a] = y_pad[row - spec.n_a: row][::-1].T
        X[t, :, spec.n_a:] = u_pad[row - spec.input_lags: row - spec.n_k][::-1].T
        y_pad[row] = np.einsum("ni,ni->n", X[t], theta_true[t]) + e[t]
    y = y_pad[lag:]
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    if not np.isfinite(peak) or peak > MAGNITUDE_GUARD:
        warnings.warn(
            f"scenario {cfg.name!r}: outputs reach {peak:.3g}, above the {MAGNITUDE_GUARD:.0e} guard; "
            "the parameter law is probably unstable",
            UnstableScenarioWarning,
            stacklevel=2,
        )

    s = cfg.solver
    theta0 = theta_true[0] + r_init.normal(0.0, math.sqrt(s.theta0_var), (N, n_theta))
    P = cfg.selector()
    g_ref = theta_g_true[0]
    theta_g0 = g_ref + r_init.normal(0.0, math.sqrt(s.g0_var), P.shape[0])
    mode = cfg.consensus_mode(theta_true[0])
    settings = AdmmSettings(mode, s.penalties, s.max_iters, s.tol)
    return ScenarioData(
        config=cfg, y=y, u=u, e=e, X=X, theta_true=theta_true, theta_g_true=theta_g_true,
        noise_var=noise_var, lam=lam, noninformative=noninformative, failing=failing,
        failure_times=failure_times, theta0=theta0, theta_g0=theta_g0, mode=mode, settings=settings,
    )


_EX3_MODEL = ArxModelSpec(n_a=2, n_b=1)
_EX3 = dict(model=_EX3_MODEL, law="mixed", theta_g=(0.2, 0.8), local_index=(1,),
            local_mean=0.4, local_var=0.0025, noise_high=20)
_PARTIAL = SolverSpec(consensus="partial")


def _ex4(name: str, lower, upper) -> ScenarioConfig:
    # The middle bound is an offset from each agent's true local parameter.
    solver = SolverSpec(consensus="constrained", box_lower=lower, box_upper=upper, rho1=10.0, rho2=0.1)
    return ScenarioConfig(name=name, horizon=5000, lam=0.99, solver=solver, **_EX3)


PRESETS: dict[str, ScenarioConfig] = {
    "example1": ScenarioConfig(name="example1"),
    "example1-noninformative": ScenarioConfig(
        name="example1-noninformative", horizon=5000, anomalies=AnomalySpec(n_noninformative=20)),
    "example1-failure": ScenarioConfig(
        name="example1-failure", horizon=5000, lam=0.99, anomalies=AnomalySpec(n_failures=10)),
    "example2": ScenarioConfig(name="example2", law="sinusoid", lam=0.95),
    "example3": ScenarioConfig(name="example3", solver=_PARTIAL, **_EX3),
    "example3-noninformative": ScenarioConfig(
        name="example3-noninformative", solver=_PARTIAL,
        anomalies=AnomalySpec(n_noninformative=20), **_EX3),
    "example4-S1": _ex4("example4-S1", (0.195, -0.05, 0.795), (0.205, 0.05, 0.805)),
    "example4-S2": _ex4("example4-S2", (0.19, -0.1, 0.79), (0.21, 0.1, 0.81)),
    "example4-S3": _ex4("example4-S3", (0.15, -0.5, 0.75), (0.25, 0.5, 0.85)),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    """Named preset, optionally with fields replaced (see ``with_overrides``)."""
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
    return cfg.with_overrides(**overrides) if overrides else cfg
