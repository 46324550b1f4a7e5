"""Generating units: turbine-governor, DFIG wind turbine and the wind-speed SDE.

A DFIG state is a length-6 vector ordered as

    (i_ds, i_qs, i_dr, i_qr, f_r, v_tilde)

i.e. stator/rotor d-q currents, rotor speed and the stochastic wind-speed
deviation.  Wind speeds are per-unit of rated speed and the mechanical torque is
divided by ``torque_base`` so it lives on the system power base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import OMEGA_BASE, S_BASE, ParameterError

IDS, IQS, IDR, IQR, FR, VW = range(6)
DFIG_LABELS = ("i_ds", "i_qs", "i_dr", "i_qr", "f_r", "v_tilde")


@dataclass(frozen=True)
class GovernorParams:
    tau_c: float
    xi: float

    def __post_init__(self):
        if self.tau_c <= 0 or self.xi <= 0:
            raise ParameterError("governor tau_c and xi must be positive")


@dataclass(frozen=True)
class WindParams:
    mu_w: float
    sigma_w: float
    v_pred: float = 0.6

    def __post_init__(self):
        if self.mu_w <= 0:
            raise ParameterError("mu_w must be positive")
        if self.sigma_w < 0:
            raise ParameterError("sigma_w must be non-negative")


@dataclass(frozen=True)
class DfigParams:
    R_s: float
    R_r: float
    X_s: float
    X_r: float
    X_m: float
    H: float
    rotor_radius: float
    f_b: float = OMEGA_BASE
    V_t: float = 1.0
    C_Q: float = 0.4
    air_density: float = 1.225
    gamma_bar: float = 1.2
    torque_base: float = S_BASE / OMEGA_BASE

    def __post_init__(self):
        for name in ("R_s", "R_r", "H", "rotor_radius", "C_Q", "air_density", "torque_base", "f_b"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"DFIG parameter {name} must be positive")
        if self.K == 0:
            raise ParameterError("degenerate DFIG reactances: X_s X_r - X_m^2 = 0")

    @property
    def K(self) -> float:
        return self.X_s * self.X_r - self.X_m**2

    @property
    def X_u(self) -> float:
        return self.X_m / self.X_s

    @property
    def b_s(self) -> float:
        return -self.f_b / self.K * self.X_m

    @property
    def b_r(self) -> float:
        return self.f_b / self.K * self.X_s

    @property
    def torque_coefficient(self) -> float:
        """``rho pi r^3 C_Q`` on the per-unit torque base."""
        return self.air_density * np.pi * self.rotor_radius**3 * self.C_Q / self.torque_base


def governor_rhs(P_c, omega, u_c, params: GovernorParams):
    return (-P_c - omega / params.xi + u_c) / params.tau_c


def mechanical_torque(v_tilde, params: DfigParams, wind: WindParams, per_unit: bool = True):
    """Aerodynamic torque ``rho pi r^3 C_Q (v + v_tilde)^2 / 2``.

    With ``per_unit=False`` the raw SI-style value is returned (no torque base).
    """
    raw = 0.5 * params.air_density * np.pi * params.rotor_radius**3 * params.C_Q
    raw = raw * (wind.v_pred + v_tilde) ** 2
    return raw / params.torque_base if per_unit else raw


def electrical_torque(x, params: DfigParams):
    x = np.asarray(x, dtype=float)
    return params.X_m * (x[..., IDS] * x[..., IQR] - x[..., IQS] * x[..., IDR])


def current_matrix(f_r, params: DfigParams) -> np.ndarray:
    """Bracketed 4x4 matrix of the current equations at rotor speed ``f_r``.

    The current drift is ``f_b/K (M(f_r) i + c V_t + N u)``.
    """
    Rs, Rr, Xs, Xr, Xm, K = params.R_s, params.R_r, params.X_s, params.X_r, params.X_m, params.K
    return np.array(
        [
            [-Rs * Xr, K + Xm**2 * f_r, Rr * Xm, Xm * Xr * f_r],
            [-(K + Xm**2 * f_r), -Rs * Xr, -Xm * Xr * f_r, Rr * Xm],
            [Rs * Xm, -Xs * Xm * f_r, -Rr * Xs, K - Xs * Xr * f_r],
            [Xs * Xm * f_r, Rs * Xm, Xs * Xr * f_r - K, -Rr * Xs],
        ]
    )


def input_matrix(params: DfigParams) -> np.ndarray:
    """``B_u`` block for one turbine restricted to the current rows (4x2)."""
    return np.array([[params.b_s, 0.0], [0.0, params.b_s], [params.b_r, 0.0], [0.0, params.b_r]])


def terminal_vector(params: DfigParams) -> np.ndarray:
    return params.f_b / params.K * np.array([params.X_r, 0.0, -params.X_m, 0.0]) * params.V_t


def dfig_drift(x, V_dr, V_qr, params: DfigParams, wind: WindParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    currents = x[:4]
    f_r, v_tilde = x[FR], x[VW]
    di = params.f_b / params.K * (current_matrix(f_r, params) @ currents)
    di = di + terminal_vector(params) + input_matrix(params) @ np.array([V_dr, V_qr])
    dfr = (mechanical_torque(v_tilde, params, wind) - electrical_torque(x, params)) / (2.0 * params.H)
    return np.concatenate([di, [dfr, -wind.mu_w * v_tilde]])


def dfig_diffusion(x, wind: WindParams) -> np.ndarray:
    G = np.zeros((6, 6))
    G[VW, VW] = wind.sigma_w * np.asarray(x, dtype=float)[VW]
    return G


def dfig_power_output(x, params: DfigParams):
    x = np.asarray(x, dtype=float)
    return -params.X_u * x[..., IQR] * x[..., FR]


def wind_sde_coefficients(v_tilde, wind: WindParams):
    return -wind.mu_w * v_tilde, wind.sigma_w * v_tilde


def wind_moments(v0: float, t, wind: WindParams):
    """Exact mean and second moment of the linear wind SDE started at ``v0``."""
    t = np.asarray(t, dtype=float)
    mean = v0 * np.exp(-wind.mu_w * t)
    second = v0**2 * np.exp((-2.0 * wind.mu_w + wind.sigma_w**2) * t)
    return mean, second


def wind_exact_path(v0: float, times, increments, wind: WindParams) -> np.ndarray:
    """Pathwise solution ``v0 exp((-mu - sigma^2/2) t + sigma W_t)`` driven by ``increments``.

    ``increments[k]`` is the Brownian increment over ``[times[k], times[k+1]]``.
    """
    times = np.asarray(times, dtype=float)
    W = np.concatenate([[0.0], np.cumsum(increments)])
    drift = -wind.mu_w - 0.5 * wind.sigma_w**2
    return v0 * np.exp(drift * (times - times[0]) + wind.sigma_w * W)
