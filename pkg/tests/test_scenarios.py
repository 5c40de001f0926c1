import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloudrls.errors import ConfigurationError
from cloudrls.metrics import snr
from cloudrls.scenarios import (
    PRESETS,
    AnomalySpec,
    ScenarioConfig,
    UnstableScenarioWarning,
    generate,
    preset,
)


def _arx_oracle(a, b, u, e, y0=0.0):
    """First-order ARX output by a plain scalar loop, zero history before t = 1."""
    T, N = u.shape
    y = np.zeros((T, N))
    for n in range(N):
        y_prev, u_prev = y0, 0.0
        for k in range(T):
            y[k, n] = a * y_prev + b * u_prev + e[k, n]
            y_prev, u_prev = y[k, n], u[k, n]
    return y


def test_outputs_follow_arx_recursion():
    d = generate(ScenarioConfig(n_agents=3, horizon=40, seed=5))
    np.testing.assert_allclose(d.y, _arx_oracle(0.9, 0.4, d.u, d.e), rtol=1e-13, atol=1e-13)
    np.testing.assert_array_equal(d.X[1:, :, 0], d.y[:-1])
    np.testing.assert_array_equal(d.X[1:, :, 1], d.u[:-1])
    np.testing.assert_array_equal(d.X[0], 0.0)


def test_null_input_and_noise_gives_null_output():
    # Variances must be positive, so the zero-noise case goes through linearity:
    # with u = 0 the output is the AR filter of e alone, and removing e leaves 0.
    cfg = ScenarioConfig(n_agents=4, horizon=60, seed=1, anomalies=AnomalySpec(n_noninformative=4))
    d = generate(cfg)
    assert np.all(d.u == 0.0)
    assert np.all(d.noise_var == 1e-8)
    np.testing.assert_allclose(d.y, _arx_oracle(0.9, 0.4, d.u, d.e), atol=1e-20, rtol=1e-12)
    np.testing.assert_array_equal(_arx_oracle(0.9, 0.4, d.u, np.zeros_like(d.e)), 0.0)


def test_second_order_model_lags():
    d = generate(preset("example3", n_agents=2, horizon=20))
    np.testing.assert_array_equal(d.X[2:, :, 0], d.y[1:-1])
    np.testing.assert_array_equal(d.X[2:, :, 1], d.y[:-2])
    np.testing.assert_array_equal(d.X[1:, :, 2], d.u[:-1])
    np.testing.assert_array_equal(d.X[0], 0.0)


def test_example1_snr_band():
    # Reference range [7.8, 20.8] dB; the integer variance draw on [1, 30]
    # lands within 1 dB of it (the largest variance gives about 7.2-7.8 dB).
    for seed in range(5):
        v = snr(*_yz(preset("example1", seed=seed)))
        assert 6.8 <= v.min() and v.max() <= 21.8, (seed, v.min(), v.max())
        assert v.min() < 8.8 and v.max() > 19.8


def _yz(cfg):
    d = generate(cfg)
    return d.y, d.e


@pytest.mark.xfail(strict=True, reason="the Example-3 system with inputs in [2, 3] gives a lowest "
                                       "per-agent SNR near 0 dB, not 3.1 dB")
def test_example3_snr_band():
    v = snr(*_yz(preset("example3", seed=0)))
    assert 3.1 - 1 <= v.min() and v.max() <= 14.6 + 1


def test_example2_traces_scaled_sine():
    d = generate(preset("example2"))
    assert d.horizon == 1000
    x = np.linspace(0.0, 2 * math.pi, 1000)
    np.testing.assert_allclose(d.theta_g_true[:, 0], 0.9 * np.sin(x), atol=1e-15)
    np.testing.assert_allclose(d.theta_g_true[:, 1], 0.4 * np.cos(x), atol=1e-15)
    assert d.theta_g_true[0, 0] == 0.0 and abs(d.theta_g_true[-1, 0]) < 1e-15
    np.testing.assert_array_equal(d.theta_true[:, 7], d.theta_g_true)


def test_mixed_law_local_parameters():
    d = generate(preset("example3", seed=2))
    theta = d.theta_true[0]
    np.testing.assert_array_equal(theta[:, 0], 0.2)
    np.testing.assert_array_equal(theta[:, 2], 0.8)
    local = theta[:, 1]
    assert abs(local.mean() - 0.4) < 4 * 0.05 / math.sqrt(local.size)
    assert 0.03 < local.std() < 0.07
    np.testing.assert_array_equal(d.theta_g_true, np.tile([0.2, 0.8], (d.horizon, 1)))


def test_noise_variances_are_integers_in_range():
    d = generate(preset("example1", seed=4))
    assert np.all(d.noise_var == np.round(d.noise_var))
    assert d.noise_var.min() >= 1 and d.noise_var.max() <= 30


@pytest.mark.parametrize("T", [5000, 1000, 400])
def test_failures_switch_once_in_window(T):
    cfg = preset("example1-failure", horizon=T, n_agents=30, **{"anomalies.n_failures": 12})
    d = generate(cfg)
    lo, hi = cfg.failure_window
    assert (lo, hi) == (round(1875 * T / 5000), round(3750 * T / 5000))
    healthy = np.setdiff1d(np.arange(30), d.failing)
    assert np.all(d.theta_true[:, healthy] == [0.9, 0.4])
    for n, t_f in zip(d.failing, d.failure_times):
        assert lo <= t_f <= hi
        traj = d.theta_true[:, n]
        changes = np.flatnonzero(np.any(np.diff(traj, axis=0) != 0, axis=1))
        assert changes.tolist() == [t_f - 2]
        np.testing.assert_array_equal(traj[0], [0.9, 0.4])
        assert 0.2 <= traj[-1, 0] <= 0.21 and 1.4 <= traj[-1, 1] <= 1.43


def test_anomalous_sets_are_disjoint():
    cfg = preset("example1", n_agents=20, horizon=100,
                 anomalies=AnomalySpec(n_noninformative=5, n_failures=5, failure_window=(10, 20),
                                       failure_reference_horizon=100))
    d = generate(cfg)
    assert len(d.noninformative) == 5 and len(d.failing) == 5
    assert not set(d.noninformative) & set(d.failing)
    assert np.all(d.u[:, d.noninformative] == 0) and np.all(d.u[:, d.failing] >= 2)


def test_magnitude_guard_warns():
    cfg = ScenarioConfig(n_agents=2, horizon=100, theta_g=(1.5, 0.4))
    with pytest.warns(UnstableScenarioWarning):
        generate(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        generate(ScenarioConfig(n_agents=2, horizon=100))


def test_initial_conditions_drawn_around_truth():
    d = generate(preset("example1", seed=9))
    spread = d.theta0 - np.array([0.9, 0.4])
    assert abs(spread.var() - 2.0) < 0.6
    assert d.theta_g0.shape == (2,)


def test_independent_streams():
    # Anomaly settings must not disturb the noise realisation.
    a = generate(preset("example1", n_agents=10, horizon=50))
    b = generate(preset("example1", n_agents=10, horizon=50, **{"anomalies.n_noninformative": 2}))
    z = a.e / np.sqrt(a.noise_var)
    w = b.e / np.sqrt(b.noise_var)
    np.testing.assert_allclose(z, w, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(sorted(PRESETS)))
def test_seeded_determinism(seed, name):
    cfg = preset(name, seed=seed, n_agents=25, horizon=50)
    a, b = generate(cfg), generate(cfg)
    for field in ("y", "u", "e", "X", "theta_true", "theta0", "theta_g0", "noise_var", "failure_times"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_presets_encode_reference_settings():
    assert preset("example1").n_agents == 100 and preset("example1").horizon == 1000
    assert preset("example1-noninformative").anomalies.n_noninformative == 20
    assert preset("example1-failure").anomalies.n_failures == 10
    assert preset("example2").lam == 0.95
    s2 = preset("example4-S2").solver
    assert (s2.box_lower, s2.box_upper) == ((0.19, -0.1, 0.79), (0.21, 0.1, 0.81))


def test_constrained_boxes_offset_local_parameters():
    d = generate(preset("example4-S1", n_agents=5, horizon=10))
    theta = d.theta_true[0]
    np.testing.assert_allclose(d.mode.lower[:, 1], theta[:, 1] - 0.05)
    np.testing.assert_allclose(d.mode.upper[:, 0], 0.205)


@pytest.mark.parametrize("kwargs", [
    dict(n_agents=0),
    dict(noise_low=0),
    dict(lam=1.5),
    dict(law="chaotic"),
    dict(theta_g=(0.9,)),
    dict(anomalies=AnomalySpec(n_noninformative=3, n_failures=3), n_agents=5),
    dict(anomalies=AnomalySpec(n_failures=1, failure_window=(10, 5000), failure_reference_horizon=1000),
         horizon=1000),
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        ScenarioConfig(**kwargs)


def test_unknown_preset():
    with pytest.raises(ConfigurationError, match="available"):
        preset("example9")
