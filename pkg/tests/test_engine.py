import numpy as np
import pytest

from olfc.engine import (
    EnsembleError,
    IntegrationDiverged,
    Scenario,
    ScheduleEvent,
    SimConfig,
    em_step,
    path_rng,
    path_seed,
    run_ensemble,
    simulate_path,
    step_lengths,
    trajectory_power,
    wind_em_paths,
)
from olfc.network import ConfigurationError
from olfc.system import ClosedLoop
from olfc.units import wind_exact_path, wind_moments

from conftest import PL0, PL1, perturbed


def kicked(plant, v0=0.2):
    return Scenario(plant, [ScheduleEvent(0.0, PL0, np.array([v0]))])


def test_step_lengths_land_on_events():
    s = step_lengths(0.0, 1.0, 0.3)
    assert s.tolist()[:3] == [0.3, 0.3, 0.3] and s[-1] == pytest.approx(0.1, abs=1e-15)
    assert s.sum() == pytest.approx(1.0, abs=1e-15)
    assert step_lengths(0.0, 5.0, 1e-3).size == 5000
    assert step_lengths(2.0, 2.0, 1e-3).size == 0


def test_em_step_without_noise_is_euler(plant):
    cl = ClosedLoop.at_load(plant.without_noise())
    z = perturbed(cl, np.random.default_rng(0))
    out = em_step(z, 1e-3, np.array([1.7]), cl)
    assert np.array_equal(out, z + 1e-3 * cl.drift(z))


def test_em_step_noise_only_on_wind(loop):
    z = perturbed(loop, np.random.default_rng(1))
    a = em_step(z, 1e-3, np.array([0.0]), loop)
    b = em_step(z, 1e-3, np.array([1.0]), loop)
    diff = b - a
    w = loop.layout.wind_indices
    assert np.count_nonzero(diff) == 1
    assert diff[w][0] == pytest.approx(loop.plant.sigma_w[0] * z[w][0] * np.sqrt(1e-3), rel=1e-12)
    with pytest.raises(ValueError):
        em_step(z, 1e-3, np.zeros(2), loop)


def test_em_step_divergence_carries_step(loop):
    z = loop.equilibrium()
    z[0] = np.inf
    with pytest.raises(IntegrationDiverged) as err, np.errstate(invalid="ignore"):
        em_step(z, 1e-3, np.zeros(1), loop, step=41)
    assert err.value.step == 41


def test_equilibrium_is_invariant(plant):
    sc = Scenario(plant, [ScheduleEvent(0.0, PL0)])
    tr = simulate_path(sc, SimConfig(horizon=2.0, record_stride=50))
    assert np.abs(tr.states - tr.states[0]).max() < 1e-8
    assert tr.guard_events == 0


def test_paths_are_reproducible(scenario):
    cfg = SimConfig(horizon=6.0, master_seed=7)
    a, b = simulate_path(scenario, cfg, 3), simulate_path(scenario, cfg, 3)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)
    assert a.path_seed == b.path_seed == path_seed(7, 3)
    c = simulate_path(scenario, cfg, 4)
    assert not np.array_equal(a.states, c.states)
    assert path_rng(7, 3).standard_normal() == path_rng(7, 3).standard_normal()


def test_load_event_switches_equilibrium(scenario):
    assert [e.time for e in scenario.events] == [0.0, 5.0]
    assert np.array_equal(scenario.loops[0].plant.grid.P_load, PL0)
    assert np.array_equal(scenario.loops[1].plant.grid.P_load, PL1)
    assert scenario.loop_at(4.999) is scenario.loops[0]
    assert scenario.loop_at(5.0) is scenario.loops[1]
    tr = simulate_path(scenario, SimConfig(horizon=6.0, record_stride=500))
    k = np.searchsorted(tr.times, 5.0)
    assert tr.times[k] == 5.0
    assert tr.segment[k - 1] == 0 and tr.segment[k + 1] == 1
    # the wind reset at the event is visible in the first post-event record
    assert tr.states[k + 1][scenario.plant.layout.wind_indices][0] != 0.0


def test_record_times(scenario):
    tr = simulate_path(scenario, SimConfig(horizon=7.0, record_stride=100))
    assert np.all(np.diff(tr.times) > 0)
    assert np.allclose(np.diff(tr.times), 0.1, atol=1e-12)
    assert tr.times[-1] == 7.0 and len(tr) == 71


def test_zero_horizon(scenario):
    tr = simulate_path(scenario, SimConfig(horizon=0.0))
    assert len(tr) == 1 and np.array_equal(tr.states[0], scenario.initial_state())


def test_sim_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        SimConfig(n_paths=0)
    with pytest.raises(ConfigurationError):
        SimConfig(scheme="rk4")
    with pytest.raises(ConfigurationError):
        Scenario(None, [ScheduleEvent(1.0, PL0)])


def test_single_path_ensemble(scenario):
    cfg = SimConfig(horizon=2.0, n_paths=1, master_seed=2)
    res = run_ensemble(scenario, cfg)
    tr = simulate_path(scenario, cfg, 0)
    assert np.array_equal(res.mean_state, tr.states)
    assert not np.any(res.var_state)


def test_ensemble_is_schedule_independent(plant):
    sc = kicked(plant)
    cfg = SimConfig(horizon=0.5, n_paths=6, master_seed=4, record_stride=50)
    a = run_ensemble(sc, cfg, workers=1)
    b = run_ensemble(sc, cfg, workers=3)
    assert np.array_equal(a.mean_state, b.mean_state)
    assert np.array_equal(a.var_state, b.var_state)
    assert np.array_equal(a.mean_storage, b.mean_storage)


def test_wind_mean_dies_out(plant):
    res = run_ensemble(kicked(plant, 0.3), SimConfig(horizon=2.0, n_paths=64, master_seed=1))
    v = res.mean_state[-1][plant.layout.wind_indices]
    assert abs(v[0]) < 1e-3


def test_standard_error_scales_with_paths(plant):
    sc = kicked(plant)
    w = plant.layout.omega
    spread = {}
    for n in (8, 32):
        means = [
            run_ensemble(sc, SimConfig(horizon=0.3, n_paths=n, master_seed=s, record_stride=300)).mean_state[-1][w][3]
            for s in range(40)
        ]
        spread[n] = np.std(means, ddof=1)
    # four times the paths halves the spread of the mean
    assert 1.5 < spread[8] / spread[32] < 2.7


def test_diverging_paths_are_reported(plant):
    sc = Scenario(plant.with_controller("literal"), [ScheduleEvent(0.0, PL0)])
    with pytest.raises(IntegrationDiverged) as err:
        simulate_path(sc, SimConfig(horizon=1.0), 2)
    assert err.value.path_index == 2 and err.value.step >= 1
    with pytest.raises(EnsembleError) as err:
        run_ensemble(sc, SimConfig(horizon=1.0, n_paths=3))
    assert sorted(err.value.failures) == [0, 1, 2]


def test_step_halving_changes_little(plant):
    sc = Scenario(plant.without_noise(), [ScheduleEvent(0.0, PL0), ScheduleEvent(5.0, PL1, np.array([0.1]))])
    z0 = sc.initial_state()
    z0[plant.layout.omega] += 0.01
    P = []
    for dt in (1e-3, 5e-4):
        tr = simulate_path(sc, SimConfig(dt=dt, horizon=10.0, record_stride=int(round(1.0 / dt))), initial=z0)
        P.append(trajectory_power(tr, sc)[-1])
    assert np.max(np.abs(P[0] - P[1]) / np.abs(P[1])) < 1e-3


# --- the wind equation on its own ---------------------------------------------------------


def test_wind_em_paths_match_recursion(plant):
    w = plant.winds[0]
    inc = np.random.default_rng(0).normal(scale=0.03, size=(2, 5))
    out = wind_em_paths(0.4, w, inc, 1e-3)
    v = 0.4
    for k in range(5):
        v = v - w.mu_w * v * 1e-3 + w.sigma_w * v * inc[0, k]
        assert out[0, k + 1] == pytest.approx(v, rel=1e-14)


def test_wind_moments_monte_carlo(plant):
    # EM on a linear SDE has closed-form moments of its own; they are the exact oracle here
    w = plant.winds[0]
    rng = np.random.default_rng(12)
    N, dt, n = 10_000, 1e-3, 200
    v = wind_em_paths(0.5, w, rng.normal(scale=np.sqrt(dt), size=(N, n)), dt)[:, -1]
    mean = 0.5 * (1 - w.mu_w * dt) ** n
    second = 0.25 * ((1 - w.mu_w * dt) ** 2 + w.sigma_w**2 * dt) ** n
    assert abs(v.mean() - mean) < 3 * v.std(ddof=1) / np.sqrt(N)
    assert abs((v**2).mean() - second) < 3 * (v**2).std(ddof=1) / np.sqrt(N)


def test_discrete_moments_converge(plant):
    w = plant.winds[0]
    T = 0.2
    exact = wind_moments(0.5, T, w)
    gaps = []
    for dt in (1e-3, 1e-4, 1e-5):
        n = int(round(T / dt))
        m = 0.5 * (1 - w.mu_w * dt) ** n
        s = 0.25 * ((1 - w.mu_w * dt) ** 2 + w.sigma_w**2 * dt) ** n
        gaps.append((abs(m / exact[0] - 1), abs(s / exact[1] - 1)))
    gaps = np.array(gaps)
    # weak order one: each tenfold refinement cuts the relative bias tenfold
    assert np.all(gaps[1:] < 0.12 * gaps[:-1])


@pytest.mark.parametrize("scheme,lo,hi", [("em", 0.4, 0.6), ("milstein", 0.85, 1.15)])
def test_uniform_strong_order(plant, scheme, lo, hi):
    w = plant.winds[0]
    T, fine, dts = 0.99, 1e-4, [1e-2, 3e-3, 1e-3, 3e-4]
    dWf = np.random.default_rng(0).normal(scale=np.sqrt(fine), size=(1000, int(round(T / fine))))
    errs = []
    for dt in dts:
        m = int(round(dt / fine))
        inc = dWf.reshape(dWf.shape[0], -1, m).sum(axis=2)
        times = np.arange(inc.shape[1] + 1) * dt
        exact = np.array([wind_exact_path(0.5, times, d, w) for d in inc])
        errs.append(np.abs(wind_em_paths(0.5, w, inc, dt, scheme) - exact).max(axis=1).mean())
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert lo <= slope <= hi
