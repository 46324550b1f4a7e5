"""Economic dispatch and the three controllers closing the loop.

* ``governor_integral_rhs``   integral controller feeding a turbine-governor
* ``consensus_controller_rhs`` distributed marginal-cost consensus for all areas
* ``dfig_controller``         rotor-voltage law for a DFIG turbine
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import ConfigurationError, NetworkTopology, ParameterError, is_connected
from .units import (
    FR,
    IDR,
    IDS,
    IQR,
    IQS,
    VW,
    DfigParams,
    WindParams,
    dfig_drift,
    dfig_power_output,
    input_matrix,
)


RATE_FLOOR = 1e-12


@dataclass(frozen=True)
class CostModel:
    """Aggregate objective ``J(P) = P'QP/2 + Z'P + 1'C``.

    ``Z`` and ``C`` already carry the sign flip of the wind utilities.
    """

    q: np.ndarray
    Z: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in ("q", "Z", "C"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.q <= 0):
            raise ParameterError("cost curvatures q_i must be positive")
        if not (self.q.shape == self.Z.shape == self.C.shape) or self.q.ndim != 1:
            raise ParameterError("q, Z and C must be vectors of equal length")

    @classmethod
    def from_units(cls, q, z, c, n_conventional: int) -> "CostModel":
        """Build from per-unit ``(q_i, z_i, c_i)`` as they appear in the unit cost/utility curves."""
        z = np.asarray(z, dtype=float).copy()
        c = np.asarray(c, dtype=float).copy()
        z[n_conventional:] *= -1.0
        c[n_conventional:] *= -1.0
        return cls(np.asarray(q, dtype=float), z, c)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)


def aggregate_cost(P, model: CostModel) -> float:
    P = np.asarray(P, dtype=float)
    return float(0.5 * P @ (model.q * P) + model.Z @ P + model.C.sum())


def marginal_cost(P, model: CostModel) -> np.ndarray:
    return model.q * np.asarray(P, dtype=float) + model.Z


def optimal_dispatch(P_load, model: CostModel) -> np.ndarray:
    P_load = np.asarray(P_load, dtype=float)
    qinv = 1.0 / model.q
    lam = (P_load.sum() + qinv @ model.Z) / qinv.sum()
    return qinv * (lam - model.Z)


def dispatch_price(P_load, model: CostModel) -> float:
    """Common marginal cost at the optimum."""
    qinv = 1.0 / model.q
    return float((np.sum(P_load) + qinv @ model.Z) / qinv.sum())


def governor_integral_rhs(delta, P_c, tau_delta):
    if np.any(np.asarray(tau_delta) <= 0):
        raise ParameterError("tau_delta must be positive")
    return (-delta + P_c) / tau_delta, delta


def consensus_controller_rhs(
    delta,
    P,
    model: CostModel,
    topology: NetworkTopology,
    xi,
    tau_delta,
    laplacian: np.ndarray | None = None,
) -> np.ndarray:
    """``tau_delta d(delta)/dt = -delta + P - blockdiag(xi^-1, I) Q L (Q delta + Z)``.

    ``xi`` only covers the conventional areas; wind areas use a unit prefactor.
    """
    delta = np.asarray(delta, dtype=float)
    if laplacian is None:
        if not is_connected(topology.n_areas, topology.comm_edges):
            raise ConfigurationError("communication graph is not connected")
        laplacian = topology.comm_laplacian
    prefactor = np.ones(topology.n_areas)
    prefactor[: topology.n_conventional] = 1.0 / np.asarray(xi, dtype=float)
    exchange = laplacian @ (model.q * delta + model.Z)
    return (-delta + np.asarray(P, dtype=float) - prefactor * model.q * exchange) / tau_delta


@dataclass
class GuardMonitor:
    """Counts evaluations in which the DFIG gain denominator had to be clamped."""

    hits: int = 0
    calls: int = 0

    def record(self, hit: bool):
        self.calls += 1
        self.hits += int(hit)


@dataclass(frozen=True)
class DfigControllerContext:
    x_bar: np.ndarray
    u_bar: np.ndarray
    P_w_opt: float
    delta_bar: float
    params: DfigParams
    wind: WindParams
    tau_delta: float
    epsilon_guard: float = 1e-4
    monitor: GuardMonitor = field(default_factory=GuardMonitor, compare=False)

    def __post_init__(self):
        if self.epsilon_guard <= 0:
            raise ParameterError("epsilon_guard must be positive")

    @property
    def Pi(self) -> np.ndarray:
        p = self.params
        return np.diag([p.R_s, p.R_s, p.R_r, p.R_r, 0.0, 0.0])

    @property
    def Psi(self) -> np.ndarray:
        p, xb = self.params, self.x_bar
        s = p.K / p.f_b
        return np.diag(
            [s * xb[IDS] / p.X_r, s * xb[IQS] / p.X_r, s * xb[IDR] / p.X_s, s * xb[IQR] / p.X_s, 0.0, 0.0]
        )


def _guarded(d: float, eps: float) -> tuple[float, bool]:
    if abs(d) >= eps:
        return d, False
    return (eps if d >= 0 else -eps), True


def uncontrolled_drift(x, params: DfigParams, wind: WindParams) -> np.ndarray:
    """``H_g(x)``: DFIG drift with zero rotor voltages."""
    return dfig_drift(x, 0.0, 0.0, params, wind)


def literal_gain_terms(x, omega, delta, ctx: DfigControllerContext) -> dict[str, float]:
    """Every scalar term entering the literal rotor-voltage law, evaluated at ``x``."""
    p, w, xb = ctx.params, ctx.wind, ctx.x_bar
    x = np.asarray(x, dtype=float)
    dfr = x[FR] - xb[FR]
    Pw = dfig_power_output(x, p)
    rho_pi_r2_cq = p.air_density * np.pi * p.rotor_radius**2 * p.C_Q / p.torque_base
    cross = p.R_r * p.X_m / p.X_r + p.R_s * p.X_m / p.X_s
    return {
        "d": p.X_r * (x[IDR] - xb[IDR]) - p.X_m * (x[IDS] - xb[IDS]),
        "K1": rho_pi_r2_cq * (dfr * w.v_pred**2 + w.v_pred * dfr**2) + dfr**2,
        "K2": (x[IDS] - p.X_m / p.X_s * x[IDR]) * p.V_t + omega * (Pw - ctx.P_w_opt),
        "K3": 2.0 * xb[FR] * p.X_m * (x[IDS] * x[IQR] - x[IQS] * x[IDR])
        + cross * x[IDR] * x[IDS]
        + cross * x[IQR] * x[IQS],
        "xPx_bar": float(xb @ ctx.Pi @ xb),
        "xPx": float(xb @ ctx.Pi @ x),
        "xPsiH": float(xb @ ctx.Psi @ uncontrolled_drift(x, p, w)),
        "D1": -p.X_u * x[IQR] * x[FR] + p.X_u * xb[IQR] * xb[FR],
        "D2": (Pw - ctx.P_w_opt) * delta,
        "D3": (delta - Pw) ** 2 - (Pw - ctx.P_w_opt) * ctx.P_w_opt,
    }


def dfig_controller(x, omega, delta, ctx: DfigControllerContext) -> tuple[float, float]:
    """Literal DFIG rotor-voltage law, with the gain denominator clamped away from zero.

    ``L(x) = X_r / d(x)`` is singular at the equilibrium; ``|d|`` is clamped to
    ``ctx.epsilon_guard`` and every clamp is counted on ``ctx.monitor``.
    """
    t = literal_gain_terms(x, omega, delta, ctx)
    d, hit = _guarded(t["d"], ctx.epsilon_guard)
    ctx.monitor.record(hit)
    L = ctx.params.X_r / d
    V_dr = -L * (t["K1"] + t["K2"] + t["K3"] + t["xPx_bar"] + t["xPx"] + t["xPsiH"])
    V_qr = -L * (t["D1"] * omega + t["D2"] * delta + t["D3"])
    return V_dr, V_qr


# --- exact-cancellation variant -------------------------------------------------


def storage_weights(params: DfigParams) -> np.ndarray:
    """Quadratic weights of the DFIG storage on the four currents."""
    return np.full(4, params.K / (params.f_b * params.X_r))


def input_gain(x, ctx: DfigControllerContext) -> np.ndarray:
    """``dLS3/du``: how the rotor voltages enter the Ito derivative of the DFIG storage."""
    e = np.asarray(x, dtype=float)[:4] - ctx.x_bar[:4]
    return (storage_weights(ctx.params) * e) @ input_matrix(ctx.params)


def ito_rate_s3(x, delta, u, ctx: DfigControllerContext) -> float:
    """Closed-form Ito derivative of the DFIG storage with the decentralised ``delta`` law."""
    p, w, xb = ctx.params, ctx.wind, ctx.x_bar
    x = np.asarray(x, dtype=float)
    e = x[:4] - xb[:4]
    f = dfig_drift(x, u[0], u[1], p, w)
    kappa = p.torque_coefficient
    rate = (storage_weights(p) * e) @ f[:4]
    rate += 4.0 * p.H * (x[FR] - xb[FR]) * f[FR]
    rate += 2.0 * kappa * x[VW] * f[VW] + kappa * (w.sigma_w * x[VW]) ** 2
    rate += (delta - ctx.delta_bar) * (dfig_power_output(x, p) - delta)
    return float(rate)


def target_rate_s3(x, omega, delta, ctx: DfigControllerContext) -> float:
    """Dissipation profile the DFIG controller is designed to impose on the storage."""
    p, w, xb = ctx.params, ctx.wind, ctx.x_bar
    x = np.asarray(x, dtype=float)
    e = x[:4] - xb[:4]
    dfr = x[FR] - xb[FR]
    vt = x[VW]
    Pw = dfig_power_output(x, p)
    kappa = p.torque_coefficient
    return float(
        -p.R_s * (e[0] ** 2 + e[1] ** 2)
        - p.R_r * (e[2] ** 2 + e[3] ** 2)
        - (delta - Pw) ** 2
        - omega * (Pw - ctx.P_w_opt)
        - (delta - ctx.delta_bar) ** 2
        - dfr**2
        - kappa * (w.mu_w - 0.5 * w.sigma_w**2 - w.v_pred - dfr) * vt**2
        - kappa * w.v_pred * (dfr + vt) ** 2
    )


def exact_dfig_controller(x, omega, delta, ctx: DfigControllerContext) -> tuple[float, float]:
    """Rotor voltages that make the storage's Ito derivative equal ``target_rate_s3``.

    Minimum-norm solution of ``g'(u - u_bar) = target - rate(u_bar)``; the
    gain ``|g|^2`` is clamped at ``epsilon_guard^2``.
    """
    g = input_gain(x, ctx)
    phi = target_rate_s3(x, omega, delta, ctx) - ito_rate_s3(x, delta, ctx.u_bar, ctx)
    g2 = float(g @ g)
    hit = g2 < ctx.epsilon_guard**2
    ctx.monitor.record(hit)
    du = phi * g / max(g2, ctx.epsilon_guard**2)
    return float(ctx.u_bar[0] + du[0]), float(ctx.u_bar[1] + du[1])


def damped_dfig_controller(x, omega, delta, ctx: DfigControllerContext, gain: float = 1.0) -> tuple[float, float]:
    """Hold the equilibrium rotor voltages and inject damping along ``-g``.

    ``g`` is the input gain of the storage, so the correction always removes
    storage at rate ``gain |g|^2``.  Never singular.
    """
    g = input_gain(x, ctx)
    ctx.monitor.record(False)
    return float(ctx.u_bar[0] - gain * g[0]), float(ctx.u_bar[1] - gain * g[1])


def supply_rate_s3(x, omega, ctx: DfigControllerContext) -> float:
    """``-omega (P_w - P_w^opt)``: the supply rate the DFIG storage must respect."""
    return float(-omega * (dfig_power_output(x, ctx.params) - ctx.P_w_opt))


def passive_dfig_controller(x, omega, delta, ctx: DfigControllerContext, gain: float = 0.005) -> tuple[float, float]:
    """Damping injection with the storage rate capped at the supply rate.

    Starts from ``u_bar - gain g``; only where that leaves the Ito rate above
    ``supply_rate_s3`` (beyond a ``RATE_FLOOR`` of rounding) is the excess
    removed along ``g``, with ``|g|^2`` clamped at ``epsilon_guard^2``.  Off the
    guard set the result satisfies ``rate <= supply + RATE_FLOOR (1 + |supply|)``.
    """
    g = input_gain(x, ctx)
    g2 = float(g @ g)
    u = ctx.u_bar - gain * g
    supply = supply_rate_s3(x, omega, ctx)
    excess = ito_rate_s3(x, delta, u, ctx) - supply
    hit = False
    # rounding noise at the equilibrium is not worth a correction
    if excess > RATE_FLOOR * (1.0 + abs(supply)):
        hit = g2 < ctx.epsilon_guard**2
        u = u - excess * g / max(g2, ctx.epsilon_guard**2)
    ctx.monitor.record(hit)
    return float(u[0]), float(u[1])


__all__ = [
    "CostModel",
    "DfigControllerContext",
    "GuardMonitor",
    "aggregate_cost",
    "consensus_controller_rhs",
    "damped_dfig_controller",
    "dfig_controller",
    "dispatch_price",
    "exact_dfig_controller",
    "governor_integral_rhs",
    "input_gain",
    "ito_rate_s3",
    "marginal_cost",
    "optimal_dispatch",
    "literal_gain_terms",
    "passive_dfig_controller",
    "supply_rate_s3",
    "target_rate_s3",
]
