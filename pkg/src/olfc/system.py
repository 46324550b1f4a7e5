"""Closed-loop assembly: flat state layout and the reference drift/diffusion.

Flat state ordering::

    theta (m) | omega (n) | V (n) | P_c (n_c) | delta (n) | DFIG block (6 n_w)

The pure-Python drift here is the reference the compiled kernel is tested
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import control
from .control import CostModel, DfigControllerContext, GuardMonitor
from .network import ConfigurationError, GridParams, GridState, NetworkTopology, swing_rhs
from .steady import SteadyState, solve_steady_state
from .units import VW, DfigParams, GovernorParams, WindParams, dfig_drift, dfig_power_output

CONTROLLERS = ("literal", "exact", "damped", "passive")


@dataclass(frozen=True)
class Layout:
    n: int
    m: int
    nc: int
    nw: int

    @property
    def size(self) -> int:
        return self.m + 3 * self.n + self.nc + 6 * self.nw

    @property
    def theta(self) -> slice:
        return slice(0, self.m)

    @property
    def omega(self) -> slice:
        return slice(self.m, self.m + self.n)

    @property
    def voltage(self) -> slice:
        return slice(self.m + self.n, self.m + 2 * self.n)

    @property
    def P_c(self) -> slice:
        s = self.m + 2 * self.n
        return slice(s, s + self.nc)

    @property
    def delta(self) -> slice:
        s = self.m + 2 * self.n + self.nc
        return slice(s, s + self.n)

    @property
    def dfig(self) -> slice:
        s = self.m + 3 * self.n + self.nc
        return slice(s, s + 6 * self.nw)

    def dfig_block(self, k: int) -> slice:
        s = self.dfig.start + 6 * k
        return slice(s, s + 6)

    @property
    def wind_indices(self) -> np.ndarray:
        return self.dfig.start + 6 * np.arange(self.nw) + VW

    def labels(self) -> list[str]:
        out = [f"theta_{k + 1}" for k in range(self.m)]
        out += [f"omega_{i + 1}" for i in range(self.n)]
        out += [f"V_{i + 1}" for i in range(self.n)]
        out += [f"P_c_{i + 1}" for i in range(self.nc)]
        out += [f"delta_{i + 1}" for i in range(self.n)]
        for k in range(self.nw):
            area = self.nc + k + 1
            out += [f"{name}_{area}" for name in ("i_ds", "i_qs", "i_dr", "i_qr", "f_r", "v_tilde")]
        return out


@dataclass(frozen=True)
class Plant:
    """Everything static about the controlled network."""

    topology: NetworkTopology
    grid: GridParams
    governors: tuple[GovernorParams, ...]
    dfigs: tuple[DfigParams, ...]
    winds: tuple[WindParams, ...]
    cost: CostModel
    tau_delta: np.ndarray
    f_r_bar: np.ndarray
    controller: str = "passive"
    epsilon_guard: float = 1e-4
    damping_gain: float = 0.005
    laplacian: np.ndarray | None = None

    def __post_init__(self):
        t = self.topology
        if len(self.governors) != t.n_conventional:
            raise ConfigurationError("one governor per conventional area is required")
        if len(self.dfigs) != t.n_wind or len(self.winds) != t.n_wind:
            raise ConfigurationError("one DFIG and wind model per wind area is required")
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown DFIG controller {self.controller!r}")
        object.__setattr__(self, "tau_delta", np.broadcast_to(np.asarray(self.tau_delta, float), (t.n_areas,)).copy())
        object.__setattr__(self, "f_r_bar", np.broadcast_to(np.asarray(self.f_r_bar, float), (t.n_wind,)).copy())
        if self.laplacian is None:
            object.__setattr__(self, "laplacian", t.comm_laplacian)

    @cached_property
    def layout(self) -> Layout:
        t = self.topology
        return Layout(t.n_areas, t.n_edges, t.n_conventional, t.n_wind)

    @property
    def xi(self) -> np.ndarray:
        return np.array([g.xi for g in self.governors])

    @property
    def tau_c(self) -> np.ndarray:
        return np.array([g.tau_c for g in self.governors])

    @property
    def sigma_w(self) -> np.ndarray:
        return np.array([w.sigma_w for w in self.winds])

    def with_load(self, P_load) -> "Plant":
        return replace(self, grid=replace(self.grid, P_load=np.asarray(P_load, dtype=float)))

    def with_controller(self, controller: str) -> "Plant":
        return replace(self, controller=controller)

    def without_noise(self) -> "Plant":
        return replace(self, winds=tuple(replace(w, sigma_w=0.0) for w in self.winds))

    def optimal_dispatch(self) -> np.ndarray:
        return control.optimal_dispatch(self.grid.P_load, self.cost)

    def steady_state(self) -> SteadyState:
        return solve_steady_state(
            self.topology, self.grid, list(self.dfigs), list(self.winds), self.optimal_dispatch(), self.f_r_bar
        )


@dataclass
class ClosedLoop:
    """The controlled network around one steady state (one constant load)."""

    plant: Plant
    steady: SteadyState
    contexts: list[DfigControllerContext] = field(init=False)

    def __post_init__(self):
        p, s, nc = self.plant, self.steady, self.plant.topology.n_conventional
        self.contexts = [
            DfigControllerContext(
                x_bar=s.x_bar[k].copy(),
                u_bar=s.u_w_bar[k].copy(),
                P_w_opt=float(s.P_bar[nc + k]),
                delta_bar=float(s.delta_bar[nc + k]),
                params=p.dfigs[k],
                wind=p.winds[k],
                tau_delta=float(p.tau_delta[nc + k]),
                epsilon_guard=p.epsilon_guard,
                monitor=GuardMonitor(),
            )
            for k in range(p.topology.n_wind)
        ]

    @classmethod
    def at_load(cls, plant: Plant, P_load=None) -> "ClosedLoop":
        if P_load is not None:
            plant = plant.with_load(P_load)
        return cls(plant, plant.steady_state())

    @property
    def layout(self) -> Layout:
        return self.plant.layout

    @property
    def guard_hits(self) -> int:
        return sum(c.monitor.hits for c in self.contexts)

    def equilibrium(self) -> np.ndarray:
        L, s = self.layout, self.steady
        z = np.zeros(L.size)
        z[L.theta] = s.theta_bar
        z[L.voltage] = s.V_bar
        z[L.P_c] = s.P_bar[: L.nc]
        z[L.delta] = s.delta_bar
        z[L.dfig] = s.x_bar.ravel()
        return z

    def generation(self, z) -> np.ndarray:
        L = self.layout
        P = np.empty(L.n)
        P[: L.nc] = z[L.P_c]
        for k in range(L.nw):
            P[L.nc + k] = dfig_power_output(z[L.dfig_block(k)], self.plant.dfigs[k])
        return P

    def rotor_voltages(self, z) -> np.ndarray:
        L, p = self.layout, self.plant
        omega, delta = z[L.omega], z[L.delta]
        u = np.empty((L.nw, 2))
        for k, ctx in enumerate(self.contexts):
            area = L.nc + k
            x = z[L.dfig_block(k)]
            if p.controller == "literal":
                u[k] = control.dfig_controller(x, omega[area], delta[area], ctx)
            elif p.controller == "exact":
                u[k] = control.exact_dfig_controller(x, omega[area], delta[area], ctx)
            elif p.controller == "passive":
                u[k] = control.passive_dfig_controller(x, omega[area], delta[area], ctx, p.damping_gain)
            else:
                u[k] = control.damped_dfig_controller(x, omega[area], delta[area], ctx, p.damping_gain)
        return u

    def drift(self, z) -> np.ndarray:
        L, p = self.layout, self.plant
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        P = self.generation(z)
        g = swing_rhs(GridState(z[L.theta], z[L.omega], z[L.voltage]), P, p.grid, p.topology)
        out[L.theta], out[L.omega], out[L.voltage] = g.theta, g.omega, g.voltage

        omega, delta = z[L.omega], z[L.delta]
        out[L.P_c] = (-z[L.P_c] - omega[: L.nc] / p.xi + delta[: L.nc]) / p.tau_c
        out[L.delta] = control.consensus_controller_rhs(
            delta, P, p.cost, p.topology, p.xi, p.tau_delta, laplacian=p.laplacian
        )
        u = self.rotor_voltages(z)
        for k in range(L.nw):
            out[L.dfig_block(k)] = dfig_drift(z[L.dfig_block(k)], u[k, 0], u[k, 1], p.dfigs[k], p.winds[k])
        return out

    def diffusion(self, z) -> np.ndarray:
        """Noise amplitude on each wind channel (``sigma_w v_tilde``)."""
        return self.plant.sigma_w * np.asarray(z)[self.layout.wind_indices]


__all__ = ["CONTROLLERS", "ClosedLoop", "Layout", "Plant"]
