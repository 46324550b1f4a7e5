import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from olfc.network import (
    ConfigurationError,
    GridParams,
    GridState,
    NetworkTopology,
    ParameterError,
    build_E_matrix,
    incidence_matrix,
    line_coupling,
    line_flows,
    swing_rhs,
)

angles = arrays(float, 4, elements=st.floats(-np.pi, np.pi))
volts = arrays(float, 4, elements=st.floats(0.2, 2.0))


def two_area(B=5.0):
    return NetworkTopology(2, 0, ((0, 1),), np.array([B]), np.array([-3 * B, -3 * B]))


def test_incidence_orientation():
    A = incidence_matrix(3, [(0, 1), (1, 2)])
    assert A.tolist() == [[1, 0], [-1, 1], [0, -1]]
    # edges are stored lexicographically whatever order they are given in
    t = NetworkTopology(2, 0, ((1, 0),), np.array([5.0]), np.array([-20.0, -20.0]))
    assert t.edges == ((0, 1),)
    assert t.incidence[:, 0].tolist() == [1.0, -1.0]


def test_E_matrix_table_values(plant):
    t, g = plant.topology, plant.grid
    E = build_E_matrix(t, g.chi_d, np.zeros(t.n_edges))
    assert E[0, 0] == pytest.approx(1 / 1.49 + 56.3, abs=1e-12)
    assert E[0, 0] == pytest.approx(56.971, abs=1e-3)
    for k, (i, j) in enumerate(t.edges):
        assert E[i, j] == -t.B_line[k]
    assert E[0, 2] == 0.0


@given(angles)
def test_E_matrix_positive_definite(plant, theta):
    E = build_E_matrix(plant.topology, plant.grid.chi_d, theta)
    assert np.allclose(E, E.T)
    assert np.linalg.eigvalsh(E).min() > 0


def test_line_coupling_examples(plant):
    t = plant.topology
    assert np.array_equal(line_coupling(np.ones(4), t), t.B_line)
    two = two_area()
    assert line_coupling(np.array([1.0, 1.1]), two)[0] == pytest.approx(5.5, abs=1e-14)


@given(volts, st.floats(0.1, 3.0))
def test_line_coupling_is_bilinear(plant, V, c):
    t = plant.topology
    assert np.allclose(line_coupling(c * V, t), c**2 * line_coupling(V, t), rtol=1e-13)


@given(angles, volts)
def test_lossless_network(plant, theta, V):
    flows = line_flows(theta, V, plant.topology)
    assert abs(flows.sum()) < 1e-10 * (1 + np.abs(flows).sum())


@given(st.floats(-1, 1), angles, volts)
def test_uniform_frequency_keeps_angles(plant, c, theta, V):
    out = swing_rhs(GridState(theta, c * np.ones(4), V), np.ones(4), plant.grid, plant.topology)
    assert np.allclose(out.theta, 0.0, atol=1e-15)


@given(arrays(float, 4, elements=st.floats(-1.5, 1.5)), volts, st.floats(-3, 3))
def test_flows_match_nodal_oracle(plant, phi, V, shift):
    # per-node sum of V_i V_j B_ij sin(phi_i - phi_j): orientation free and shift invariant
    t = plant.topology
    oracle = np.zeros(4)
    for k, (i, j) in enumerate(t.edges):
        for a, b in ((i, j), (j, i)):
            oracle[a] += V[a] * V[b] * t.B_line[k] * np.sin(phi[a] - phi[b])
    theta = t.incidence.T @ (phi + shift)
    assert np.allclose(line_flows(theta, V, t), oracle, atol=1e-11)


def test_zero_everything_fixed_point():
    t = two_area()
    chi = np.array([1.5, 1.2])
    V = np.array([1.0, 0.9])
    E = build_E_matrix(t, chi, np.zeros(1))
    grid = GridParams(np.ones(2), np.ones(2), np.ones(2), chi, chi * (E @ V), np.zeros(2))
    out = swing_rhs(GridState(np.zeros(1), np.zeros(2), V), np.zeros(2), grid, t)
    assert np.allclose(out.theta, 0) and np.allclose(out.omega, 0) and np.allclose(out.voltage, 0, atol=1e-14)


def test_steady_state_is_fixed_point(loop):
    s, p = loop.steady, loop.plant
    out = swing_rhs(s.grid, s.P_bar, p.grid, p.topology)
    assert np.abs(out.theta).max() < 1e-12
    assert np.abs(out.omega).max() < 1e-8
    assert np.abs(out.voltage).max() < 1e-8


def test_topology_validation():
    with pytest.raises(ConfigurationError, match="not connected"):
        NetworkTopology(3, 0, ((0, 1),), np.array([1.0]), -np.full(3, 10.0))
    with pytest.raises(ConfigurationError, match="self-loop"):
        NetworkTopology(2, 0, ((1, 1),), np.array([1.0]), -np.full(2, 10.0))
    with pytest.raises(ConfigurationError, match="duplicate"):
        NetworkTopology(2, 0, ((0, 1), (1, 0)), np.array([1.0, 1.0]), -np.full(2, 10.0))
    with pytest.raises(ParameterError, match="must exceed"):
        NetworkTopology(2, 0, ((0, 1),), np.array([5.0]), -np.array([4.0, 10.0]))
    with pytest.raises(ParameterError, match="negative"):
        NetworkTopology(2, 0, ((0, 1),), np.array([5.0]), np.array([10.0, -10.0]))


def test_grid_params_positive():
    with pytest.raises(ParameterError):
        GridParams(np.ones(2), np.ones(2), np.array([1.0, 0.0]), np.ones(2), np.ones(2), np.zeros(2))


def test_swing_rhs_shape_errors(plant):
    s = GridState(np.zeros(3), np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        swing_rhs(s, np.zeros(4), plant.grid, plant.topology)
