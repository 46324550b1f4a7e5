"""Steady states of the augmented network (zero frequency, optimal generation)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import GridParams, GridState, NetworkTopology, build_E_matrix, line_flows, swing_rhs
from .units import DfigParams, WindParams, dfig_drift


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def newton(F, z0, tol=1e-12, max_iter=60, h=1e-7):
    """Damped Newton with a central-difference Jacobian.

    Returns ``(z, residual_inf_norm, iterations)``; raises ``SolverError`` when
    the residual cannot be pushed below ``tol``.
    """
    z = np.array(z0, dtype=float)
    r = F(z)
    res = np.abs(r).max()
    for it in range(max_iter):
        if res < tol:
            return z, res, it
        J = np.empty((r.size, z.size))
        for k in range(z.size):
            step = h * max(1.0, abs(z[k]))
            zp, zm = z.copy(), z.copy()
            zp[k] += step
            zm[k] -= step
            J[:, k] = (F(zp) - F(zm)) / (2 * step)
        dz = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            zn = z + lam * dz
            rn = F(zn)
            if np.all(np.isfinite(rn)) and np.abs(rn).max() < (1 - 1e-4 * lam) * res:
                break
            lam *= 0.5
        else:
            raise SolverError("Newton line search stalled", res)
        z, r = zn, rn
        res = np.abs(r).max()
    if res < tol:
        return z, res, max_iter
    raise SolverError("Newton did not converge", res)


@dataclass(frozen=True)
class SteadyState:
    theta_bar: np.ndarray
    omega_bar: np.ndarray
    V_bar: np.ndarray
    P_bar: np.ndarray
    x_bar: np.ndarray  # (n_wind, 6)
    delta_bar: np.ndarray
    u_c_bar: np.ndarray
    u_w_bar: np.ndarray  # (n_wind, 2)
    P_load: np.ndarray
    residual_norm: float

    @property
    def grid(self) -> GridState:
        return GridState(self.theta_bar, self.omega_bar, self.V_bar)


def solve_grid(topology: NetworkTopology, grid: GridParams, P_target, tol=1e-12):
    """Angles and voltages with ``omega = 0`` balancing ``P_target`` against the load."""
    n = topology.n_areas
    A = topology.incidence
    P_target = np.asarray(P_target, dtype=float)
    mismatch = P_target.sum() - grid.P_load.sum()
    if abs(mismatch) > 1e-9 * max(1.0, np.abs(grid.P_load).sum()):
        raise ValueError(f"target generation does not balance the load (mismatch {mismatch:.3e})")

    def unpack(z):
        phi = np.concatenate([[0.0], z[: n - 1]])
        return A.T @ phi, z[n - 1 :]

    def F(z):
        theta, V = unpack(z)
        power = P_target - grid.P_load - line_flows(theta, V, topology)
        volt = -grid.chi_d * (build_E_matrix(topology, grid.chi_d, theta) @ V) + grid.E_f
        return np.concatenate([power[1:], volt])

    z, res, _ = newton(F, np.concatenate([np.zeros(n - 1), np.ones(n)]), tol=tol)
    return unpack(z)


def solve_dfig(params: DfigParams, wind: WindParams, P_target: float, f_r_bar: float = 1.0, tol=1e-12):
    """Currents and rotor voltages holding ``f_r = f_r_bar`` while producing ``P_target``.

    The wind deviation is zero at a steady state so the diffusion vanishes there.
    """

    def F(z):
        x = np.concatenate([z[:4], [f_r_bar, 0.0]])
        f = dfig_drift(x, z[4], z[5], params, wind)
        return np.concatenate([f[:5] * params.K / params.f_b, [-params.X_u * z[3] * f_r_bar - P_target]])

    iqr = -P_target / (params.X_u * f_r_bar)
    z, res, _ = newton(F, np.array([0.1, 0.1, 0.1, iqr, 0.0, 0.0]), tol=tol)
    x = np.concatenate([z[:4], [f_r_bar, 0.0]])
    return x, z[4:].copy()


def solve_steady_state(
    topology: NetworkTopology,
    grid: GridParams,
    dfigs: list[DfigParams],
    winds: list[WindParams],
    P_target,
    f_r_bar: float | list[float] = 1.0,
) -> SteadyState:
    nc = topology.n_conventional
    P_target = np.asarray(P_target, dtype=float)
    theta, V = solve_grid(topology, grid, P_target)
    f_r_bar = np.broadcast_to(np.asarray(f_r_bar, dtype=float), (topology.n_wind,))
    xs, us = [], []
    for k, (p, w) in enumerate(zip(dfigs, winds)):
        x, u = solve_dfig(p, w, P_target[nc + k], f_r_bar[k])
        xs.append(x)
        us.append(u)
    x_bar = np.array(xs).reshape(topology.n_wind, 6)
    u_w = np.array(us).reshape(topology.n_wind, 2)

    omega = np.zeros(topology.n_areas)
    state = GridState(theta, omega, V)
    g = swing_rhs(state, P_target, grid, topology)
    resid = [np.abs(g.theta).max(initial=0), np.abs(g.omega * grid.tau_p).max(), np.abs(g.voltage * grid.tau_v).max()]
    for k in range(topology.n_wind):
        f = dfig_drift(x_bar[k], u_w[k, 0], u_w[k, 1], dfigs[k], winds[k])
        resid.append(np.abs(f).max())
    return SteadyState(
        theta_bar=theta,
        omega_bar=omega,
        V_bar=V,
        P_bar=P_target.copy(),
        x_bar=x_bar,
        delta_bar=P_target.copy(),
        u_c_bar=P_target[:nc].copy(),
        u_w_bar=u_w,
        P_load=grid.P_load.copy(),
        residual_norm=float(max(resid)),
    )


__all__ = ["SolverError", "SteadyState", "newton", "solve_dfig", "solve_grid", "solve_steady_state"]
