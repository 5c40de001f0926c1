"""Two-time-scale simulation of agents and cloud.

Every time step has a Local phase, in which each agent processes its new
sample and uploads a payload, followed by a Global phase on the cloud. The
cloud only starts once all N payloads for the step are in (synchronous
barrier) and, for the N2C2N schemes, an agent cannot start step t+1 before
it has received its reply for step t.

All traffic goes through a :class:`Channel`. Payloads travel in batched
envelopes holding one message per agent; the transmission log counts the
individual messages.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Protocol

import numpy as np

from cloudrls.admm import AdmmSettings, cloud_iterate, initial_cloud_state
from cloudrls.core import RlsState, extended_regressor, gain_update, local_rls_update
from cloudrls.errors import ConditioningError, ConfigurationError
from cloudrls.greedy import centralized_rls_step, lump, s_rls_global, sw_rls_global
from cloudrls.modes import Variant
from cloudrls.scenarios import ScenarioConfig, ScenarioData, generate

__all__ = [
    "BroadcastMsg",
    "Channel",
    "CloudToNodeMsg",
    "Downlink",
    "ESTIMATORS",
    "InMemoryChannel",
    "NodeToCloudMsg",
    "ProtocolError",
    "RunResult",
    "TransmissionLog",
    "Uplink",
    "estimators_for",
    "replay_inputs",
    "run_simulation",
]

ESTIMATORS = ("c-rls", "s-rls", "sw-rls", "m-rls", "mw-rls", "admm-rls")


class ProtocolError(RuntimeError):
    """A phase started before the messages it depends on were delivered."""


def _size(*arrays) -> int:
    return sum(int(np.size(a)) for a in arrays if a is not None)


@dataclass(frozen=True)
class NodeToCloudMsg:
    """One agent's upload for step ``t``.

    ADMM-RLS sends ``theta_rls`` and ``phi``; S/M-RLS only the estimate;
    SW/MW-RLS estimate and ``phi``; C-RLS the raw pair (``y``, ``X``).
    """

    agent_id: int
    t: int
    theta_rls: np.ndarray | None = None
    phi: np.ndarray | None = None
    y: np.ndarray | None = None
    X: np.ndarray | None = None

    @property
    def n_elements(self) -> int:
        return _size(self.theta_rls, self.phi, self.y, self.X)


@dataclass(frozen=True)
class CloudToNodeMsg:
    """Fused estimate returned to one agent after the cloud loop for ``t``."""

    agent_id: int
    t: int
    theta: np.ndarray


@dataclass(frozen=True)
class BroadcastMsg:
    """Global estimate sent to every agent (M-RLS and MW-RLS feedback)."""

    t: int
    theta_g: np.ndarray


@dataclass(frozen=True)
class Uplink:
    """Batched node-to-cloud envelope: row ``i`` belongs to ``agent_ids[i]``."""

    t: int
    agent_ids: np.ndarray
    theta_rls: np.ndarray | None = None
    phi: np.ndarray | None = None
    y: np.ndarray | None = None
    X: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.agent_ids)

    @property
    def n_elements(self) -> int:
        return _size(self.theta_rls, self.phi, self.y, self.X)

    def messages(self) -> Iterator[NodeToCloudMsg]:
        pick = lambda a, i: None if a is None else a[i]
        for i, n in enumerate(self.agent_ids):
            yield NodeToCloudMsg(int(n), self.t, pick(self.theta_rls, i), pick(self.phi, i),
                                 pick(self.y, i), pick(self.X, i))


@dataclass(frozen=True)
class Downlink:
    """Batched cloud-to-node envelope of fused estimates."""

    t: int
    agent_ids: np.ndarray
    theta: np.ndarray

    @property
    def count(self) -> int:
        return len(self.agent_ids)

    @property
    def n_elements(self) -> int:
        return _size(self.theta)

    def messages(self) -> Iterator[CloudToNodeMsg]:
        for i, n in enumerate(self.agent_ids):
            yield CloudToNodeMsg(int(n), self.t, self.theta[i])


@dataclass
class TransmissionLog:
    """Per-step message and payload-element counts by direction."""

    horizon: int
    uplink: np.ndarray = field(init=False)
    downlink: np.ndarray = field(init=False)
    broadcast: np.ndarray = field(init=False)
    uplink_elements: np.ndarray = field(init=False)
    downlink_elements: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("uplink", "downlink", "broadcast", "uplink_elements", "downlink_elements"):
            setattr(self, name, np.zeros(self.horizon, dtype=np.int64))

    def record(self, direction: str, t: int, count: int, elements: int) -> None:
        getattr(self, direction)[t - 1] += count
        if direction == "uplink":
            self.uplink_elements[t - 1] += elements
        else:
            self.downlink_elements[t - 1] += elements

    def totals(self) -> dict[str, int]:
        return {
            "node_to_cloud": int(self.uplink.sum()),
            "cloud_to_node": int(self.downlink.sum()),
            "broadcast": int(self.broadcast.sum()),
            "uplink_elements": int(self.uplink_elements.sum()),
            "downlink_elements": int(self.downlink_elements.sum()),
        }


class Channel(Protocol):
    """Transport between agents and cloud."""

    log: TransmissionLog

    def send_up(self, batch: Uplink) -> None: ...

    def receive_up(self, t: int, n_agents: int) -> Uplink: ...

    def send_down(self, batch: Downlink | BroadcastMsg) -> None: ...

    def receive_down(self, t: int) -> Downlink | BroadcastMsg: ...


class InMemoryChannel:
    """Loss-free, zero-latency channel with message accounting."""

    def __init__(self, horizon: int):
        self.log = TransmissionLog(horizon)
        self._up: dict[int, list[Uplink]] = defaultdict(list)
        self._down: dict[int, list] = defaultdict(list)

    def send_up(self, batch: Uplink) -> None:
        self._up[batch.t].append(batch)
        self.log.record("uplink", batch.t, batch.count, batch.n_elements)

    def receive_up(self, t: int, n_agents: int) -> Uplink:
        batches = self._up.pop(t, [])
        if len(batches) != 1 or batches[0].count != n_agents:
            got = sum(b.count for b in batches)
            raise ProtocolError(f"cloud phase for t={t} needs {n_agents} payloads, {got} arrived")
        batch = batches[0]
        if not np.array_equal(batch.agent_ids, np.arange(n_agents)):
            raise ProtocolError(f"payloads for t={t} are not one per agent in index order")
        return batch

    def send_down(self, batch: Downlink | BroadcastMsg) -> None:
        self._down[batch.t].append(batch)
        if isinstance(batch, BroadcastMsg):
            self.log.record("broadcast", batch.t, 1, _size(batch.theta_g))
        else:
            self.log.record("downlink", batch.t, batch.count, batch.n_elements)

    def receive_down(self, t: int) -> Downlink | BroadcastMsg:
        batches = self._down.pop(t, [])
        if len(batches) != 1:
            raise ProtocolError(f"agents expected one reply for t={t}, got {len(batches)}")
        return batches[0]


@dataclass
class RunResult:
    """Per-step trajectories of one estimator on one scenario realisation.

    Local arrays are (T, N, n_theta), global ones (T, n_g). Estimators
    without a quantity (C-RLS has no local estimates, greedy methods no
    duals) leave it as NaN or ``None``.
    """

    estimator: str
    scenario: str
    seed: int
    theta_true: np.ndarray
    theta_g_true: np.ndarray
    theta_rls: np.ndarray
    theta_fused: np.ndarray
    theta_global: np.ndarray
    duals: np.ndarray | None
    iterations: np.ndarray
    log: TransmissionLog
    P: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None


def replay_inputs(scenario: ScenarioConfig | ScenarioData) -> ScenarioData:
    """The shared data streams for ``scenario`` (generated once if given a config)."""
    return scenario if isinstance(scenario, ScenarioData) else generate(scenario)


def estimators_for(data: ScenarioConfig | ScenarioData) -> tuple[str, ...]:
    """Estimators that apply to the scenario's consensus mode."""
    consensus = data.config.solver.consensus if isinstance(data, ScenarioData) else data.solver.consensus
    return ESTIMATORS if consensus == "full" else ("admm-rls",)


def _classical_gain(phi, X, lam, t):
    try:
        return gain_update(phi, X, lam)
    except ConditioningError as exc:
        lam_n = np.broadcast_to(lam, phi.shape[:1])
        for n in range(phi.shape[0]):
            try:
                gain_update(phi[n], X[n], lam_n[n])
            except ConditioningError:
                raise exc.locate(agent=n, t=t) from None
        raise exc.locate(t=t) from None


class _Strategy:
    """Agent-side and cloud-side halves of one estimator."""

    feedback = False

    def __init__(self, data: ScenarioData):
        self.data = data
        N, n = data.n_agents, data.n_theta
        self.lam = data.lam
        self.phi = np.broadcast_to(data.config.solver.phi0 * np.eye(n), (N, n, n)).copy()
        self.theta = data.theta0.copy()
        self.theta_g = data.theta_g0.copy()
        self.iterations = 0

    def local(self, t: int, X: np.ndarray, y: np.ndarray) -> Uplink:
        raise NotImplementedError

    def cloud(self, up: Uplink):
        raise NotImplementedError

    def receive(self, msg) -> None:
        pass

    @property
    def duals(self):
        return None


class _AdmmStrategy(_Strategy):
    feedback = True

    def __init__(self, data: ScenarioData):
        super().__init__(data)
        self.settings: AdmmSettings = data.settings
        self.mode = self.settings.mode
        self.state = initial_cloud_state(
            data.n_agents, data.n_theta, self.mode, data.theta_g0, theta_local0=data.theta0)
        self.fused = self.theta

    def local(self, t, X, y):
        X_ext = extended_regressor(X[..., None], self.lam, self.mode, self.settings.penalties)
        y_ext = np.zeros(X_ext.shape[:1] + X_ext.shape[-1:])
        y_ext[:, 0] = y
        K, self.phi = _classical_gain(self.phi, X_ext, self.lam, t)
        self.rls = local_rls_update(K, X_ext, y_ext, self.theta)
        return Uplink(t, np.arange(len(y)), theta_rls=self.rls, phi=self.phi)

    def cloud(self, up):
        fused, self.state, report = cloud_iterate(
            self.state, up.theta_rls, up.phi, self.lam, self.settings, t=up.t)
        self.iterations = report.iterations
        self.theta_g = self.state.theta_g
        return Downlink(up.t, up.agent_ids, fused)

    def receive(self, msg):
        self.theta = msg.theta
        self.fused = msg.theta

    @property
    def duals(self):
        return self.state.dual


class _GreedyStrategy(_Strategy):
    """S/SW (no feedback) and M/MW (global estimate fed back) RLS."""

    def __init__(self, data: ScenarioData, *, weighted: bool, mixed: bool):
        super().__init__(data)
        self.weighted = weighted
        self.feedback = mixed

    def local(self, t, X, y):
        prior = np.broadcast_to(self.theta_g, self.theta.shape) if self.feedback else self.theta
        K, self.phi = _classical_gain(self.phi, X[..., None], self.lam, t)
        self.theta = local_rls_update(K, X[..., None], y[:, None], prior)
        self.rls = self.fused = self.theta
        return Uplink(t, np.arange(len(y)), theta_rls=self.theta,
                      phi=self.phi if self.weighted else None)

    def cloud(self, up):
        if self.weighted:
            try:
                self.theta_g = sw_rls_global(up.theta_rls, up.phi)
            except ConditioningError as exc:
                raise exc.locate(t=up.t) from None
        else:
            self.theta_g = s_rls_global(up.theta_rls)
        return BroadcastMsg(up.t, self.theta_g) if self.feedback else None

    def receive(self, msg):
        self.theta_g = msg.theta_g


class _CentralizedStrategy(_Strategy):
    def __init__(self, data: ScenarioData):
        super().__init__(data)
        if not np.all(self.lam == self.lam[0]):
            raise ConfigurationError("C-RLS needs one forgetting factor shared by all agents")
        n = data.n_theta
        self.central = RlsState(theta=data.theta_g0, phi=data.config.solver.phi0 * np.eye(n),
                                lam=float(self.lam[0]))
        self.rls = self.fused = np.full_like(self.theta, np.nan)

    def local(self, t, X, y):
        return Uplink(t, np.arange(len(y)), y=y[:, None], X=X[..., None])

    def cloud(self, up):
        try:
            self.central = centralized_rls_step(self.central, lump(up.X, up.y))
        except ConditioningError as exc:
            raise exc.locate(t=up.t) from None
        self.theta_g = self.central.theta
        return None


def _make_strategy(name: str, data: ScenarioData) -> _Strategy:
    if name not in ESTIMATORS:
        raise ConfigurationError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")
    if name != "admm-rls" and data.mode.variant is not Variant.FULL:
        raise ConfigurationError(f"{name} only supports full consensus, scenario uses {data.mode.variant.value}")
    if name == "admm-rls":
        return _AdmmStrategy(data)
    if name == "c-rls":
        return _CentralizedStrategy(data)
    return _GreedyStrategy(data, weighted=name in ("sw-rls", "mw-rls"), mixed=name in ("m-rls", "mw-rls"))


def run_simulation(
    scenario: ScenarioConfig | ScenarioData,
    estimator: str,
    channel: Channel | None = None,
) -> RunResult:
    """Run one estimator over the whole horizon.

    Raises
    ------
    ConfigurationError
        Unknown estimator or one that does not support the consensus mode.
    ConditioningError
        A numerical failure, tagged with agent, step and inner iteration when known.
    """
    data = replay_inputs(scenario)
    strategy = _make_strategy(estimator, data)
    T, N, n = data.horizon, data.n_agents, data.n_theta
    n_g = data.theta_g_true.shape[1]
    channel = channel or InMemoryChannel(T)
    rls = np.empty((T, N, n))
    fused = np.empty((T, N, n))
    glob = np.empty((T, n_g))
    duals = np.empty((T, N, n_g)) if estimator == "admm-rls" else None
    iterations = np.zeros(T, dtype=np.int64)

    for t in range(1, T + 1):
        # Local phase: every agent consumes its sample and uploads.
        channel.send_up(strategy.local(t, data.X[t - 1], data.y[t - 1]))
        # Global phase: starts only once all N payloads for t are in.
        reply = strategy.cloud(channel.receive_up(t, N))
        if reply is not None:
            channel.send_down(reply)
        if strategy.feedback:
            strategy.receive(channel.receive_down(t))
        rls[t - 1] = strategy.rls
        fused[t - 1] = strategy.fused
        glob[t - 1] = strategy.theta_g
        if duals is not None:
            duals[t - 1] = strategy.duals
        iterations[t - 1] = strategy.iterations

    lower = upper = None
    if data.mode.variant is Variant.CONSTRAINED:
        lower, upper = (np.array(b) for b in data.mode.bounds(N))
    return RunResult(
        estimator=estimator, scenario=data.config.name, seed=data.config.seed,
        theta_true=data.theta_true, theta_g_true=data.theta_g_true,
        theta_rls=rls, theta_fused=fused, theta_global=glob, duals=duals,
        iterations=iterations, log=channel.log, P=data.mode.selector(n),
        lower=lower, upper=upper,
    )
