"""Network topology and the swing/voltage dynamics of a lossless multi-area grid.

Angles are carried as edge differences ``theta`` (one entry per line), so the
dynamics never see absolute angles.  Edges are oriented ``i -> j`` with
``i < j``; the incidence matrix carries ``+1`` at ``i`` and ``-1`` at ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

S_BASE = 1000e6
OMEGA_BASE = 120.0 * np.pi


class ParameterError(ValueError):
    """Raised when a model parameter violates its physical constraints."""


class ConfigurationError(ValueError):
    """Raised when a topology or scenario description is inconsistent."""


def _orient(edges: Sequence[Sequence[int]]) -> list[tuple[int, int]]:
    out = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ConfigurationError(f"self-loop on area {i}")
        out.append((min(i, j), max(i, j)))
    if len(set(out)) != len(out):
        raise ConfigurationError("duplicate edge")
    return out


def incidence_matrix(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    A = np.zeros((n, len(edges)))
    for k, (i, j) in enumerate(edges):
        A[i, k] = 1.0
        A[j, k] = -1.0
    return A


def laplacian(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    A = incidence_matrix(n, edges)
    return A @ A.T


def is_connected(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges)
    return nx.is_connected(g)


@dataclass(frozen=True)
class NetworkTopology:
    """Areas ``0..n_c-1`` are conventional, ``n_c..n-1`` carry wind turbines.

    ``B_line[k]`` is the (positive) susceptance of edge ``k``; ``B_self`` holds
    the negative self-susceptances ``B_ii``.
    """

    n_conventional: int
    n_wind: int
    edges: tuple[tuple[int, int], ...]
    B_line: np.ndarray
    B_self: np.ndarray
    comm_edges: tuple[tuple[int, int], ...] = ()
    incidence: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n_conventional + self.n_wind
        edges = tuple(_orient(self.edges))
        comm = tuple(_orient(self.comm_edges)) if self.comm_edges else edges
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "comm_edges", comm)
        object.__setattr__(self, "B_line", np.asarray(self.B_line, dtype=float))
        object.__setattr__(self, "B_self", np.asarray(self.B_self, dtype=float))
        object.__setattr__(self, "incidence", incidence_matrix(n, edges))

        if n < 1:
            raise ConfigurationError("network needs at least one area")
        for i, j in edges + comm:
            if j >= n:
                raise ConfigurationError(f"edge ({i}, {j}) references a missing area")
        if self.B_line.shape != (len(edges),):
            raise ConfigurationError("B_line needs one entry per edge")
        if self.B_self.shape != (n,):
            raise ConfigurationError("B_self needs one entry per area")
        if not is_connected(n, edges):
            raise ConfigurationError("physical graph is not connected")
        if not is_connected(n, comm):
            raise ConfigurationError("communication graph is not connected")
        if np.any(self.B_self >= 0):
            raise ParameterError("self-susceptances B_ii must be negative")
        load = np.abs(self.incidence) @ np.abs(self.B_line)
        bad = np.flatnonzero(np.abs(self.B_self) <= load)
        if bad.size:
            raise ParameterError(
                f"|B_ii| must exceed the sum of incident line susceptances (areas {bad.tolist()})"
            )

    @property
    def n_areas(self) -> int:
        return self.n_conventional + self.n_wind

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def comm_laplacian(self) -> np.ndarray:
        return laplacian(self.n_areas, self.comm_edges)

    def edge_index(self, i: int, j: int) -> int:
        return self.edges.index((min(i, j), max(i, j)))


@dataclass(frozen=True)
class GridState:
    theta: np.ndarray
    omega: np.ndarray
    voltage: np.ndarray


@dataclass(frozen=True)
class GridParams:
    """Per-area grid constants; every field is a length-``n`` vector (diagonals)."""

    tau_p: np.ndarray
    tau_v: np.ndarray
    psi: np.ndarray
    chi_d: np.ndarray
    E_f: np.ndarray
    P_load: np.ndarray

    def __post_init__(self):
        for name in ("tau_p", "tau_v", "psi", "chi_d", "E_f", "P_load"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("tau_p", "tau_v", "psi", "chi_d"):
            if np.any(getattr(self, name) <= 0):
                raise ParameterError(f"{name} must be strictly positive")


def build_E_matrix(topology: NetworkTopology, chi_d, theta) -> np.ndarray:
    chi_d = np.asarray(chi_d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(chi_d <= 0):
        raise ParameterError("chi_d = X_d - X'_d must be positive")
    if theta.shape != (topology.n_edges,):
        raise ValueError("theta must have one entry per edge")
    E = np.diag(1.0 / chi_d - topology.B_self)
    for k, (i, j) in enumerate(topology.edges):
        E[i, j] = E[j, i] = -topology.B_line[k] * np.cos(theta[k])
    return E


def coupling_matrix(voltage, topology: NetworkTopology) -> np.ndarray:
    """Diagonal ``Upsilon(V)`` with entries ``V_i V_j B_ij``."""
    return np.diag(line_coupling(voltage, topology))


def line_coupling(voltage, topology: NetworkTopology) -> np.ndarray:
    V = np.asarray(voltage, dtype=float)
    i, j = np.array(topology.edges, dtype=int).reshape(-1, 2).T
    return V[i] * V[j] * topology.B_line


def line_flows(theta, voltage, topology: NetworkTopology) -> np.ndarray:
    """Net power leaving each area, ``A Upsilon(V) sin(theta)``."""
    return topology.incidence @ (line_coupling(voltage, topology) * np.sin(theta))


def swing_rhs(state: GridState, P_gen, params: GridParams, topology: NetworkTopology) -> GridState:
    n, m = topology.n_areas, topology.n_edges
    theta, omega, V = state.theta, state.omega, state.voltage
    P_gen = np.asarray(P_gen, dtype=float)
    P_load = params.P_load
    if theta.shape != (m,) or omega.shape != (n,) or V.shape != (n,):
        raise ValueError("grid state dimensions do not match the topology")
    if P_gen.shape != (n,) or P_load.shape != (n,):
        raise ValueError("power vectors must have one entry per area")

    dtheta = topology.incidence.T @ omega
    domega = (-params.psi * omega + P_gen - P_load - line_flows(theta, V, topology)) / params.tau_p
    E = build_E_matrix(topology, params.chi_d, theta)
    dV = (-params.chi_d * (E @ V) + params.E_f) / params.tau_v
    return GridState(dtheta, domega, dV)
