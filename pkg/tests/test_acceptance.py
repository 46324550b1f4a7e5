"""Acceptance criteria, one test per criterion.

Each test records a ``ACCEPTANCE <k> PASS|FAIL`` line; the lines are printed in
the pytest terminal summary and when the module is run as a script.
"""

import copy
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from olfc.audit import (
    check_assumption2,
    check_assumption4,
    dfig_block_rates,
    dfig_supply_rate,
    equilibrium_certificate,
    lyapunov_decrement,
)
from olfc.cli import EXIT_AUDIT, EXIT_OK, main
from olfc.config import bundled_config_path, load_bundled
from olfc.control import CostModel, optimal_dispatch
from olfc.engine import (
    Scenario,
    ScheduleEvent,
    SimConfig,
    run_ensemble,
    simulate_path,
    trajectory_storage,
    wind_em_paths,
)
from olfc.system import ClosedLoop
from olfc.units import wind_exact_path, wind_moments

from conftest import PL1, perturbed

RESULTS: dict[int, str] = {}


def record(k: int, title: str, ok: bool, detail: str):
    RESULTS[k] = f"ACCEPTANCE {k} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    assert ok, RESULTS[k]


# --- 1 ---------------------------------------------------------------------------------


def projected_gradient(P_l, q, z, iters=20_000):
    """Two-area oracle: gradient steps projected onto the balance line ``P_1 + P_2 = sum P_l``."""
    P = np.array(P_l, dtype=float)
    step = 1.0 / q.max()
    for _ in range(iters):
        g = q * P + z
        g = g - g.mean()
        P = P - step * g
        if np.abs(g).max() < 1e-13:
            break
    return P


def test_criterion_1_dispatch_optimality():
    worst = {"kkt": 0.0, "balance": 0.0, "oracle": 0.0}
    count = [0]

    @settings(max_examples=100, database=None, derandomize=True, suppress_health_check=list(HealthCheck))
    @given(
        st.integers(1, 8).flatmap(
            lambda n: st.tuples(
                st.lists(st.floats(0.1, 10.0), min_size=n, max_size=n),
                st.lists(st.floats(-5.0, 5.0), min_size=n, max_size=n),
                st.lists(st.floats(0.0, 5.0), min_size=n, max_size=n),
            )
        )
    )
    def instance(args):
        q, z, P_l = (np.array(a) for a in args)
        m = CostModel(q, z, np.zeros(q.size))
        P = optimal_dispatch(P_l, m)
        mc = q * P + z
        worst["kkt"] = max(worst["kkt"], float(np.ptp(mc)))
        worst["balance"] = max(worst["balance"], abs(float(np.sum(P - P_l))))
        count[0] += 1

    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    instance()
    for _ in range(50):
        q, z, P_l = rng.uniform(0.1, 10, 2), rng.uniform(-5, 5, 2), rng.uniform(0, 5, 2)
        P = optimal_dispatch(P_l, CostModel(q, z, np.zeros(2)))
        worst["oracle"] = max(worst["oracle"], float(np.abs(P - projected_gradient(P_l, q, z)).max()))
    elapsed = time.perf_counter() - t0
    ok = (
        count[0] >= 100
        and worst["kkt"] < 1e-10
        and worst["balance"] < 1e-10
        and worst["oracle"] < 1e-6
        and elapsed < 1.0
    )
    record(
        1,
        "dispatch optimality",
        ok,
        f"{count[0]} instances, max mc gap {worst['kkt']:.1e}, max balance {worst['balance']:.1e}, "
        f"n=2 oracle {worst['oracle']:.1e}, {elapsed:.2f} s",
    )


# --- 2 ---------------------------------------------------------------------------------


def test_criterion_2_four_area_reproduction():
    cfg = load_bundled()
    sim = cfg.simulation
    assert sim.n_paths >= 64 and sim.horizon == 30.0
    sc = cfg.scenario()
    t0 = time.perf_counter()
    res = run_ensemble(sc, sim, keep_paths=False)
    elapsed = time.perf_counter() - t0
    L = cfg.plant.layout
    omega = np.abs(res.mean_state[-1][L.omega]).max()
    P_opt = optimal_dispatch(PL1, cfg.plant.cost)
    rel = (np.abs(res.mean_power[-1] - P_opt) / np.maximum(np.abs(P_opt), 0.1)).max()
    ok = res.times[-1] == 30.0 and omega < 1e-3 and rel < 0.02 and elapsed < 120
    record(
        2,
        "four-area reproduction",
        ok,
        f"{res.n_paths} paths, max|omega(30)| {omega:.3e}, max rel P error {rel:.3e}, {elapsed:.1f} s",
    )


# --- 3 ---------------------------------------------------------------------------------


def test_criterion_3_dfig_passivity(plant):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, bad, n = np.inf, 0, 0

    def audit(z, loop):
        nonlocal worst, bad, n
        supply = dfig_supply_rate(z, loop)
        m = supply + 1e-6 * (1 + np.abs(supply)) - dfig_block_rates(z, loop)
        worst = min(worst, float(m.min()))
        bad += int(np.sum(m < 0))
        n += m.size

    loops = [ClosedLoop.at_load(plant), ClosedLoop.at_load(plant, PL1)]
    for i in range(10_000):
        audit(perturbed(loops[i % 2], rng, scale=0.05), loops[i % 2])
    cfg = load_bundled()
    sc = cfg.scenario()
    sim = cfg.with_overrides(paths=16).simulation
    for p in range(16):
        tr = simulate_path(sc, sim, p)
        for z, seg in zip(tr.states, tr.segment):
            audit(z, sc.loops[seg])
    elapsed = time.perf_counter() - t0
    record(
        3,
        "DFIG stochastic passivity",
        bad == 0 and elapsed < 60,
        f"{n} unit samples (1e4 box + 16 paths), {bad} violations, worst slack {worst:.3e}, {elapsed:.1f} s",
    )


# --- 4 ---------------------------------------------------------------------------------


def test_criterion_4_equilibrium_certificate(loop, loop_post):
    t0 = time.perf_counter()
    parts = []
    ok = True
    for name, cl in (("pre", loop), ("post", loop_post)):
        grad, hess = equilibrium_certificate(cl)
        a2_ok, a2 = check_assumption2(cl.steady, cl.plant.topology, cl.plant.grid.chi_d)
        ok &= grad < 1e-6 and hess > 0 and a2_ok and a2 > 0
        parts.append(f"{name}: |grad S| {grad:.1e}, min eig H {hess:.3e}, A2 min eig {a2:.3f}")
    elapsed = time.perf_counter() - t0
    record(4, "equilibrium certificate", ok and elapsed < 10, "; ".join(parts) + f", {elapsed:.1f} s")


# --- 5 ---------------------------------------------------------------------------------


def test_criterion_5_lyapunov_decrement(plant):
    t0 = time.perf_counter()
    quiet = Scenario(plant.without_noise(), [ScheduleEvent(0.0, PL1)])
    z0 = perturbed(quiet.loops[0], np.random.default_rng(5), scale=0.02, v_max=0.2)
    tr = simulate_path(quiet, SimConfig(horizon=10.0, record_stride=10), initial=z0)
    S = trajectory_storage(tr, quiet)
    stats = lyapunov_decrement(S)
    det_ok = stats["max_increase"] <= stats["monotone_tol"]

    # same start with the wind deviation away from its absorbing zero, 64 noisy paths
    noisy = Scenario(plant, [ScheduleEvent(0.0, PL1)])
    z_start = z0.copy()
    z_start[noisy.plant.layout.wind_indices] = 0.2
    sim = SimConfig(horizon=10.0, master_seed=55, record_stride=10)
    S_paths = np.array([trajectory_storage(simulate_path(noisy, sim, i, z_start), noisy) for i in range(64)])
    dS = np.diff(S_paths, axis=1)
    mean = dS.mean(axis=0)
    se = dS.std(axis=0, ddof=1) / np.sqrt(dS.shape[0])
    excess = mean - 1.645 * se
    sto_ok = bool(np.all(excess <= 0))
    elapsed = time.perf_counter() - t0
    record(
        5,
        "Lyapunov decrement",
        det_ok and sto_ok and elapsed < 120,
        f"deterministic max dS {stats['max_increase']:.2e} (tol {stats['monotone_tol']:.1e}); "
        f"stochastic worst mean dS - 1.645 se {excess.max():.2e} over {mean.size} steps; {elapsed:.1f} s",
    )


# --- 6 ---------------------------------------------------------------------------------


def test_criterion_6_integrator_fidelity(plant):
    w = plant.winds[0]
    t0 = time.perf_counter()
    v0 = 0.5

    # strong error on a shared fine increment grid; sup over the path, averaged over paths
    T, fine, dts = 0.99, 1e-4, [1e-2, 3e-3, 1e-3, 3e-4]
    dWf = np.random.default_rng(60).normal(scale=np.sqrt(fine), size=(1000, int(round(T / fine))))
    errs = []
    for dt in dts:
        inc = dWf.reshape(dWf.shape[0], -1, int(round(dt / fine))).sum(axis=2)
        times = np.arange(inc.shape[1] + 1) * dt
        exact = np.array([wind_exact_path(v0, times, d, w) for d in inc])
        errs.append(np.abs(wind_em_paths(v0, w, inc, dt) - exact).max(axis=1).mean())
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])

    # moments at T = 1 against the analytic formulas
    N, dt, n = 10_000, 1e-4, 10_000
    rng = np.random.default_rng(61)
    v = np.full(N, v0)
    for _ in range(n // 1000):
        v = wind_em_paths(v, w, rng.normal(scale=np.sqrt(dt), size=(N, 1000)), dt)[:, -1]
    m1, m2 = wind_moments(v0, 1.0, w)

    def z_scores(v):
        return (
            abs(v.mean() - m1) / (v.std(ddof=1) / np.sqrt(v.size)),
            abs((v**2).mean() - m2) / ((v**2).std(ddof=1) / np.sqrt(v.size)),
        )

    z1, z2 = z_scores(v)
    # control: exact draws of the same law with the same sample size
    W = np.random.default_rng(62).normal(size=N)
    c1, c2 = z_scores(v0 * np.exp(-w.mu_w - 0.5 * w.sigma_w**2 + w.sigma_w * W))
    elapsed = time.perf_counter() - t0
    record(
        6,
        "SDE integrator fidelity",
        0.4 <= slope <= 0.6 and z1 < 3 and z2 < 3 and elapsed < 60,
        f"strong slope {slope:.3f} (errors {', '.join(f'{e:.2e}' for e in errs)}); "
        f"T=1 EM mean {z1:.2f} se, second moment {z2:.2f} se "
        f"(exact sampler control: {c1:.2f} se, {c2:.2f} se; log-variance of v^2 {4 * w.sigma_w**2:.1f}); "
        f"{elapsed:.1f} s",
    )


# --- 7 ---------------------------------------------------------------------------------


def test_criterion_7_determinism(tmp_path):
    runner = CliRunner()
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        res = runner.invoke(main, ["ensemble", "--config", str(bundled_config_path()), "--out", str(out)])
        assert res.exit_code == EXIT_OK, res.output
        blobs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = blobs[0] == blobs[1] and len(blobs[0]) == 2
    record(7, "determinism", same, f"{len(blobs[0])} CSV files, bit-identical: {same}")


# --- 8 ---------------------------------------------------------------------------------


def test_criterion_8_assumption_gates(plant, tmp_path):
    ok4, margins = check_assumption4(plant.winds, plant.f_r_bar, [d.gamma_bar for d in plant.dfigs])
    m = float(margins[0])
    # 17.15 + 1 - 2.65^2/2 - 0.6 - 1.2 = 12.83875, which is 12.839 to three decimals
    exact_ok = ok4 and abs(m - 12.83875) <= 1e-12 and round(m, 3) == 12.839

    raw = json.loads(bundled_config_path().read_text())
    bad = copy.deepcopy(raw)
    bad["areas"][3]["wind"]["sigma_w"] = 7.0
    path = tmp_path / "sigma7.json"
    path.write_text(json.dumps(bad))
    res = CliRunner().invoke(main, ["audit", "--config", str(path), "--out", str(tmp_path / "o"), "--paths", "4"])
    report = json.loads((tmp_path / "o" / "audit.json").read_text())
    gate_ok = res.exit_code == EXIT_AUDIT and "assumption4" in res.output and report["failed"] == ["assumption4"]
    record(
        8,
        "assumption gates",
        exact_ok and gate_ok,
        f"margin {m:.12f} (rounds to {round(m, 3)}); sigma_w=7 audit exit {res.exit_code}, failed {report['failed']}",
    )


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
