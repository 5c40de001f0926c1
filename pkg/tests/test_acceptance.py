"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a one-line verdict (printed immediately and again in the
terminal summary) before asserting, so a failing criterion still reports its
measured values. Stochastic criteria average over ten seeds.
"""

import time

import numpy as np
import pytest

import drivers
from cloudrls.cli import main
from cloudrls.core import extended_regressor, gain_update
from cloudrls.modes import ConsensusMode, Penalties
from cloudrls.scenarios import PRESETS, preset
from cloudrls.sim import run_simulation
from conftest import ACCEPTANCE

SEEDS = range(10)


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"acceptance criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _fmt(values) -> str:
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


def test_criterion_01_oracle_equivalence():
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    worst = {}
    for variant in drivers.VARIANTS:
        err = 0.0
        for exact in (False, True):
            for _ in range(100):
                inst = drivers.random_instance(rng, variant, exact=exact)
                records = drivers.run_recursive(inst)
                fused, _ = drivers.oracle_trajectory(inst, records)
                got = np.stack([r.fused for r in records])
                err = max(err, float(np.max(np.abs(got - fused))))
        worst[variant] = err
    seconds = time.perf_counter() - start
    ok = all(e <= 1e-8 for e in worst.values()) and seconds < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(1, ok, f"max |recursive - closed form|: {detail} (tol 1e-8); {seconds:.1f} s (limit 10 s)")


def test_criterion_02_gain_identity():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for i in range(10_000):
        variant = drivers.VARIANTS[i % 3]
        n = int(rng.integers(1, 4))
        if variant == "full":
            mode = ConsensusMode.full()
        else:
            P = rng.standard_normal((int(rng.integers(1, n + 1)), n))
            mode = (ConsensusMode.partial(P) if variant == "partial"
                    else ConsensusMode.constrained(P, -np.ones(n), np.ones(n)))
        pen = Penalties(rho=rng.uniform(0.1, 2), rho1=rng.uniform(0.5, 10), rho2=rng.uniform(0.1, 2))
        A = rng.standard_normal((n, n))
        phi = A @ A.T + 0.1 * np.eye(n)
        lam = float(rng.uniform(0.5, 1.0))
        X_ext = extended_regressor(rng.standard_normal((n, 1)), lam, mode, pen)
        K, phi_new = gain_update(phi, X_ext, lam)
        worst = max(worst, float(np.max(np.abs(K - phi_new @ X_ext))))
    seconds = time.perf_counter() - start
    verdict(2, worst <= 1e-10 and seconds < 10,
            f"max |K - phi X|: {worst:.1e} over 10^4 calls (tol 1e-10); {seconds:.1f} s (limit 10 s)")


def test_criterion_03_mode_reduction():
    start = time.perf_counter()
    base = preset("example1", n_agents=10, horizon=100)
    full = run_simulation(base, "admm-rls")
    part = run_simulation(base.with_overrides(**{"solver.consensus": "partial", "solver.P": ((1.0, 0.0), (0.0, 1.0))}),
                          "admm-rls")
    seconds = time.perf_counter() - start
    diff = max(float(np.max(np.abs(getattr(full, f) - getattr(part, f))))
               for f in ("theta_rls", "theta_fused", "theta_global", "duals"))
    verdict(3, diff <= 1e-10 and seconds < 5,
            f"max |partial(P=I) - full|: {diff:.1e} (tol 1e-10); {seconds:.1f} s (limit 5 s)")


@pytest.mark.slow
def test_criterion_04_example1_grid():
    big = [drivers.summary("example1", "admm-rls", s) for s in SEEDS]
    small = [drivers.summary("example1", "admm-rls", s, (("n_agents", 10),)) for s in SEEDS]
    m_big = float(np.mean([r.rmse_norm for r in big]))
    m_small = float(np.mean([r.rmse_norm for r in small]))
    slowest = max(r.seconds for r in big)
    ok = (abs(m_big - 0.03) <= 0.5 * 0.03 and abs(m_small - 0.09) <= 0.5 * 0.09 and slowest < 120)
    verdict(4, ok, f"N=100/T=1000 mean {m_big:.4f} (target 0.03 +/-50%), N=10/T=1000 mean {m_small:.4f} "
                   f"(target 0.09 +/-50%); largest cell {slowest:.1f} s (limit 120 s)")


@pytest.mark.slow
def test_criterion_05_method_comparison():
    means = {e: drivers.mean_norm("example1", e, SEEDS)
             for e in ("admm-rls", "c-rls", "s-rls", "sw-rls", "m-rls", "mw-rls")}
    per_seed = max(sum(drivers.summary("example1", e, s).seconds for e in means) for s in SEEDS)
    ok = (means["admm-rls"] <= means["s-rls"] and abs(means["admm-rls"] - means["c-rls"]) <= 0.02
          and per_seed < 300)
    detail = ", ".join(f"{e} {v:.4f}" for e, v in means.items())
    verdict(5, ok, f"means {detail}; need ADMM <= S-RLS and |ADMM - C-RLS| <= 0.02; "
                   f"six estimators {per_seed:.1f} s per seed (limit 300 s)")


@pytest.mark.slow
def test_criterion_06_noninformative():
    counts = (1, 10, 20, 50)
    runs = {k: [drivers.summary("example1-noninformative", "admm-rls", s, (("anomalies.n_noninformative", k),))
                for s in SEEDS] for k in counts}
    means = {k: float(np.mean([r.rmse_norm for r in v])) for k, v in runs.items()}
    per_seed = max(sum(runs[k][i].seconds for k in counts) for i in range(len(SEEDS)))
    ok = (all(means[k] <= 0.05 for k in (1, 10, 20)) and means[50] >= means[20] and per_seed < 600)
    verdict(6, ok, f"N_ni 1/10/20/50 -> {_fmt(means.values())}; need <= 0.05 for 1/10/20 and "
                   f"value(50) >= value(20); {per_seed:.1f} s per seed (limit 600 s)")


@pytest.mark.slow
def test_criterion_07_failures():
    counts = (1, 10, 20)
    runs = {k: [drivers.summary("example1-failure", "admm-rls", s, (("anomalies.n_failures", k),))
                for s in SEEDS] for k in counts}
    means = {k: float(np.mean([r.rmse_norm for r in v])) for k, v in runs.items()}
    per_seed = max(sum(runs[k][i].seconds for k in counts) for i in range(len(SEEDS)))
    ok = all(v <= 0.06 for v in means.values()) and per_seed < 600
    verdict(7, ok, f"N_f 1/10/20 -> {_fmt(means.values())}; need <= 0.06; {per_seed:.1f} s per seed (limit 600 s)")


@pytest.mark.slow
def test_criterion_08_time_varying():
    runs = [drivers.summary("example2", "admm-rls", s) for s in SEEDS]
    mean = float(np.mean([r.rmse_norm for r in runs]))
    slowest = max(r.seconds for r in runs)
    verdict(8, abs(mean - 0.08) <= 0.04 and slowest < 120,
            f"mean {mean:.4f} (target 0.08 +/- 0.04); {slowest:.1f} s per seed (limit 120 s)")


@pytest.mark.slow
def test_criterion_09_partial_consensus():
    runs = [drivers.summary("example3", "admm-rls", s) for s in SEEDS]
    dist = float(np.mean([np.linalg.norm(r.final_global - [0.2, 0.8]) for r in runs]))
    ni = [drivers.summary("example3-noninformative", "admm-rls", s) for s in SEEDS]
    drift = max(r.local_drift for r in ni)
    gap = max(r.global_gap for r in ni)
    per_seed = max(a.seconds + b.seconds for a, b in zip(runs, ni))
    # Null-input agents still observe their noise-driven output, so the
    # local component receives information of order sum y^2 ~ 1e-5 against
    # a prior of 10 (phi(0) = 0.1 I). "Stays at its initialization" is read
    # as a drift at most 1e-4, four orders below the initial offset scale
    # sqrt(2). Global components must follow the cloud within 1e-2.
    ok = dist <= 0.05 and drift <= 1e-4 and gap <= 1e-2 and per_seed < 300
    verdict(9, ok, f"mean ||g(T) - (0.2, 0.8)|| {dist:.4f} (tol 0.05); N_ni=20 local drift {drift:.1e} (tol 1e-4), "
                   f"global tracking gap {gap:.1e} (tol 1e-2); {per_seed:.1f} s per seed (limit 300 s)")


@pytest.mark.slow
def test_criterion_10_constrained():
    base = [drivers.summary("example4-S2", "admm-rls", s) for s in SEEDS]
    loose = [drivers.summary("example4-S2", "admm-rls", s, (("solver.rho1", 1e-4),)) for s in SEEDS]
    in_bounds = all(r.global_in_bounds for r in base)
    rmse = np.mean([r.rmse_g for r in base], axis=0)
    viol_hi = float(np.mean([r.violation_pct.mean() for r in base]))
    viol_lo = float(np.mean([r.violation_pct.mean() for r in loose]))
    per_seed = max(a.seconds + b.seconds for a, b in zip(base, loose))
    ok = (in_bounds and rmse[0] <= 0.005 and rmse[1] <= 0.02 and viol_hi < viol_lo and per_seed < 900)
    verdict(10, ok, f"(a) global in bounds at every t: {in_bounds}; (b) RMSE^g {_fmt(rmse)} "
                    f"(tol 0.005, 0.02); (c) mean violations {viol_hi:.1f}% at rho1/rho2=100 vs "
                    f"{viol_lo:.1f}% at 1e-3; {per_seed:.1f} s per seed (limit 900 s)")


def test_criterion_11_determinism(tmp_path):
    differing = []
    for name in PRESETS:
        blobs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            code = main(["run", "--preset", name, "--estimator", "all", "--seeds", "1,4",
                         "--agents", "25", "--horizon", "40", "--quiet", "--out", str(out)])
            assert code == 0
            blobs.append(((out / "metrics.csv").read_bytes(), (out / "trajectories.csv").read_bytes()))
        if blobs[0] != blobs[1]:
            differing.append(name)
    verdict(11, not differing, f"{len(PRESETS)} presets re-run; CSV outputs differing: {differing or 'none'}")
