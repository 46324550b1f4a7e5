import numpy as np
import pytest

from olfc.network import GridParams, GridState, NetworkTopology, build_E_matrix, swing_rhs
from olfc.steady import SolverError, newton, solve_dfig, solve_grid
from olfc.units import FR, VW, dfig_drift, dfig_power_output

from conftest import PL1


def test_newton_scalar():
    z, res, it = newton(lambda z: np.array([z[0] ** 2 - 2.0]), np.array([1.0]))
    assert z[0] == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert res < 1e-12 and it < 10


def test_newton_reports_failure():
    with pytest.raises(SolverError) as err:
        newton(lambda z: np.array([z[0] ** 2 + 1.0]), np.array([1.0]))
    assert err.value.residual > 0


def test_single_area_voltage_is_analytic():
    t = NetworkTopology(1, 0, (), np.zeros(0), np.array([-5.0]))
    g = GridParams([1.0], [1.0], [1.0], [1.5], [2.0], [0.0])
    theta, V = solve_grid(t, g, np.zeros(1))
    assert theta.size == 0
    E = build_E_matrix(t, g.chi_d, theta)
    assert V == pytest.approx(np.linalg.solve(E, g.E_f / g.chi_d), abs=1e-13)
    assert V[0] == pytest.approx((2.0 / 1.5) / (1 / 1.5 + 5.0), abs=1e-13)


def test_post_step_steady_state(plant):
    s = plant.with_load(PL1).steady_state()
    assert np.all(np.abs(s.theta_bar) < np.pi / 2)
    assert s.residual_norm < 1e-8
    assert s.P_bar.sum() == pytest.approx(PL1.sum(), abs=1e-12)
    assert np.array_equal(s.delta_bar, s.P_bar)
    out = swing_rhs(GridState(s.theta_bar, s.omega_bar, s.V_bar), s.P_bar, plant.with_load(PL1).grid, plant.topology)
    assert max(np.abs(out.omega).max(), np.abs(out.voltage).max()) < 1e-8
    for k in range(plant.topology.n_wind):
        f = dfig_drift(s.x_bar[k], *s.u_w_bar[k], plant.dfigs[k], plant.winds[k])
        assert np.abs(f).max() < 1e-8
        assert s.x_bar[k, VW] == 0.0 and s.x_bar[k, FR] == 1.0


def test_conventional_setpoints(loop):
    s, nc = loop.steady, loop.layout.nc
    # u_c = P_c + omega / xi with omega = 0
    assert np.array_equal(s.u_c_bar, s.P_bar[:nc])


def test_dfig_solver_hits_target(plant):
    for P in (0.2, 1.0, 3.4):
        x, u = solve_dfig(plant.dfigs[0], plant.winds[0], P)
        assert dfig_power_output(x, plant.dfigs[0]) == pytest.approx(P, abs=1e-11)
        assert np.abs(dfig_drift(x, *u, plant.dfigs[0], plant.winds[0])).max() < 1e-8


def test_unbalanced_target_rejected(plant):
    with pytest.raises(ValueError, match="balance"):
        solve_grid(plant.topology, plant.grid, plant.grid.P_load + 0.1)


def test_infeasible_transfer_raises():
    t = NetworkTopology(2, 0, ((0, 1),), np.array([0.5]), np.array([-5.0, -5.0]))
    g = GridParams([1.0] * 2, [1.0] * 2, [1.0] * 2, [1.5] * 2, [2.0] * 2, [0.0, 5.0])
    with pytest.raises(SolverError):
        solve_grid(t, g, np.array([5.0, 0.0]))
