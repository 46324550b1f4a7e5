"""Storage functions, assumption gates and numeric passivity certificates.

Every certificate is checked numerically: finite differences for gradients,
Hessians and Ito derivatives, eigen-solvers for definiteness.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import control
from .network import GridState, NetworkTopology, ParameterError, build_E_matrix, line_coupling
from .steady import SteadyState
from .system import ClosedLoop
from .units import FR, VW, DfigParams, WindParams, dfig_power_output

GRADIENT_TOL = 1e-6
PD_MARGIN = 1e-8


# --- assumption gates -------------------------------------------------------------


def schur_matrix(theta_bar, V_bar, topology: NetworkTopology, chi_d) -> np.ndarray:
    """``chi_d E - diag(V)^-1 |A| Y diag(sin) diag(cos)^-1 diag(sin) |A|' diag(V)^-1`` at the steady state."""
    theta_bar = np.asarray(theta_bar, dtype=float)
    V_bar = np.asarray(V_bar, dtype=float)
    chi_d = np.asarray(chi_d, dtype=float)
    absA = np.abs(topology.incidence)
    s, c = np.sin(theta_bar), np.cos(theta_bar)
    W = absA @ np.diag(line_coupling(V_bar, topology) * s * s / c) @ absA.T
    Vinv = np.diag(1.0 / V_bar)
    return chi_d[:, None] * build_E_matrix(topology, chi_d, theta_bar) - Vinv @ W @ Vinv


def check_assumption2(steady: SteadyState, topology: NetworkTopology, chi_d) -> tuple[bool, float]:
    """Angles inside ``(-pi/2, pi/2)`` and the Schur-complement matrix positive definite."""
    theta = np.asarray(steady.theta_bar, dtype=float)
    if np.any(np.abs(theta) >= np.pi / 2):
        return False, float("-inf")
    M = schur_matrix(theta, steady.V_bar, topology, chi_d)
    # chi_d E is not symmetric for non-uniform chi_d; definiteness is of the symmetric part
    min_eig = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    return min_eig > 0.0, min_eig


def assumption4_margin(wind: WindParams, f_r_bar: float, gamma_bar: float) -> float:
    return wind.mu_w + f_r_bar - 0.5 * wind.sigma_w**2 - wind.v_pred - gamma_bar


def check_assumption4(winds, f_r_bar, gamma_bar) -> tuple[bool, np.ndarray]:
    """Wind-parameter gate, one margin per wind area; passes iff every margin is positive."""
    winds = list(winds)
    f_r_bar = np.broadcast_to(np.asarray(f_r_bar, dtype=float), (len(winds),))
    gamma_bar = np.broadcast_to(np.asarray(gamma_bar, dtype=float), (len(winds),))
    margins = np.array([assumption4_margin(w, f, g) for w, f, g in zip(winds, f_r_bar, gamma_bar)])
    return bool(np.all(margins > 0)), margins


# --- storage functions --------------------------------------------------------------


def exciter_reference(grid_E_f, chi_d) -> np.ndarray:
    """Exciter voltage expressed on the ``E(theta) V`` scale (``chi_d^-1 E_f``)."""
    return np.asarray(grid_E_f, dtype=float) / np.asarray(chi_d, dtype=float)


def storage_S1(state: GridState, steady: SteadyState, chi_d, E_f, tau_p, topology: NetworkTopology) -> float:
    theta, omega, V = (np.asarray(a, dtype=float) for a in (state.theta, state.omega, state.voltage))
    tb, Vb = steady.theta_bar, steady.V_bar
    E_fd = exciter_reference(E_f, chi_d)
    Y, Yb = line_coupling(V, topology), line_coupling(Vb, topology)
    D = 1.0 / np.asarray(chi_d, dtype=float) - topology.B_self
    dw = omega - steady.omega_bar
    return float(
        -Y @ np.cos(theta)
        + Yb @ np.cos(tb)
        + 0.5 * V @ (D * V)
        - (Yb * np.sin(tb)) @ (theta - tb)
        - E_fd @ (V - Vb)
        - 0.5 * Vb @ (D * Vb)
        + 0.5 * dw @ (np.asarray(tau_p, dtype=float) * dw)
    )


def storage_S2(P_c, delta_c, P_c_opt, delta_c_bar, governors, tau_delta_c) -> float:
    """``sum (tau_c xi / 2)(P_c - P_c^opt)^2 + (tau_delta xi / 2)(delta - delta_bar)^2``."""
    tau_c = np.array([g.tau_c for g in governors])
    xi = np.array([g.xi for g in governors])
    dP = np.asarray(P_c, dtype=float) - np.asarray(P_c_opt, dtype=float)
    dd = np.asarray(delta_c, dtype=float) - np.asarray(delta_c_bar, dtype=float)
    return float(np.sum(0.5 * tau_c * xi * dP**2 + 0.5 * np.asarray(tau_delta_c) * xi * dd**2))


def storage_S3_unit(x, delta, x_bar, delta_bar, params: DfigParams, tau_delta: float) -> float:
    w = params.K / (params.f_b * params.X_r)
    if w <= 0:
        raise ParameterError("K / (f_b X_r) must be positive for the DFIG storage")
    x = np.asarray(x, dtype=float)
    e = x[:4] - np.asarray(x_bar)[:4]
    return float(
        0.5 * w * (e @ e)
        + 2.0 * params.H * (x[FR] - x_bar[FR]) ** 2
        + params.torque_coefficient * x[VW] ** 2
        + 0.5 * tau_delta * (delta - delta_bar) ** 2
    )


def storage_S3(x, delta_w, steady: SteadyState, dfigs, tau_delta_w) -> float:
    x = np.asarray(x, dtype=float).reshape(-1, 6)
    nc = steady.P_bar.size - x.shape[0]
    tau_delta_w = np.broadcast_to(np.asarray(tau_delta_w, dtype=float), (x.shape[0],))
    return sum(
        storage_S3_unit(x[k], delta_w[k], steady.x_bar[k], steady.delta_bar[nc + k], dfigs[k], tau_delta_w[k])
        for k in range(x.shape[0])
    )


def total_storage(z, loop: ClosedLoop) -> float:
    """``S = S1 + S2 + S3`` on a flat closed-loop state."""
    L, p, s = loop.layout, loop.plant, loop.steady
    z = np.asarray(z, dtype=float)
    g = p.grid
    S1 = storage_S1(GridState(z[L.theta], z[L.omega], z[L.voltage]), s, g.chi_d, g.E_f, g.tau_p, p.topology)
    delta = z[L.delta]
    S2 = storage_S2(z[L.P_c], delta[: L.nc], s.P_bar[: L.nc], s.delta_bar[: L.nc], p.governors, p.tau_delta[: L.nc])
    S3 = storage_S3(z[L.dfig], delta[L.nc :], s, p.dfigs, p.tau_delta[L.nc :])
    return S1 + S2 + S3


def storage_function(loop: ClosedLoop):
    return lambda z: total_storage(z, loop)


# --- finite-difference calculus ------------------------------------------------------


def _step(x, rel: float) -> float:
    return rel * max(1.0, float(np.linalg.norm(x)))


def gradient_fd(S, x, h: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = _step(x, 1e-6) if h is None else h
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (S(x + e) - S(x - e)) / (2 * h)
    return g


def hessian_fd(S, x, h: float | None = None) -> np.ndarray:
    """Symmetrised second differences of ``S`` (step ``1e-4 max(1, |x|)``)."""
    x = np.asarray(x, dtype=float)
    h = _step(x, 1e-4) if h is None else h
    n = x.size
    H = np.empty((n, n))
    S0 = S(x)
    I = np.eye(n) * h
    for i in range(n):
        H[i, i] = (S(x + I[i]) - 2 * S0 + S(x - I[i])) / h**2
        for j in range(i + 1, n):
            H[i, j] = H[j, i] = (
                S(x + I[i] + I[j]) - S(x + I[i] - I[j]) - S(x - I[i] + I[j]) + S(x - I[i] - I[j])
            ) / (4 * h**2)
    return H


def ito_derivative_numeric(S, x, drift, diffusion, h: float | None = None) -> float:
    """``LS = dS/dx f + 1/2 tr(G' d2S/dx2 G)`` by central differences.

    ``diffusion`` is the ``(dim, k)`` noise matrix ``G``; only its columns are
    probed for curvature, along unit directions with step ``1e-4 max(1, |x|)``.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(drift, dtype=float)
    G = np.asarray(diffusion, dtype=float).reshape(x.size, -1)
    grad = gradient_fd(S, x, h)
    value = float(grad @ f)
    h2 = _step(x, 1e-4)
    S0 = S(x)
    for col in G.T:
        norm = float(np.linalg.norm(col))
        if norm == 0.0:
            continue
        u = col / norm * h2
        value += 0.5 * norm**2 * (S(x + u) - 2 * S0 + S(x - u)) / h2**2
    if not np.isfinite(value):
        raise FloatingPointError("non-finite Ito derivative estimate")
    return value


def diffusion_matrix(z, loop: ClosedLoop) -> np.ndarray:
    L = loop.layout
    G = np.zeros((L.size, L.nw))
    G[L.wind_indices, np.arange(L.nw)] = loop.diffusion(z)
    return G


def ito_derivative(z, loop: ClosedLoop) -> float:
    return ito_derivative_numeric(storage_function(loop), z, loop.drift(z), diffusion_matrix(z, loop))


# --- closed-form rates ------------------------------------------------------------


def dfig_supply_rate(z, loop: ClosedLoop) -> np.ndarray:
    """``-omega_i (P_wi - P_wi^opt)`` per wind area."""
    L = loop.layout
    out = np.empty(L.nw)
    for k, ctx in enumerate(loop.contexts):
        P_w = dfig_power_output(z[L.dfig_block(k)], ctx.params)
        out[k] = -z[L.omega][L.nc + k] * (P_w - ctx.P_w_opt)
    return out


def dfig_block_rates(z, loop: ClosedLoop) -> np.ndarray:
    """Closed-form ``LS3_i`` under the loop's own rotor voltages."""
    L = loop.layout
    u = loop.rotor_voltages(z)
    delta = z[L.delta]
    return np.array(
        [control.ito_rate_s3(z[L.dfig_block(k)], delta[L.nc + k], u[k], ctx) for k, ctx in enumerate(loop.contexts)]
    )


def dfig_block_rates_numeric(z, loop: ClosedLoop) -> np.ndarray:
    """``LS3_i`` by finite differences of the storage on the unit's own coordinates.

    The ``delta`` channel follows the unit's decentralised law ``(P_w - delta) / tau_delta``;
    the consensus exchange is accounted for network-wide, not per unit.
    """
    L, p, s = loop.layout, loop.plant, loop.steady
    f = loop.drift(z)
    sig = loop.diffusion(z)
    out = np.empty(L.nw)
    for k in range(L.nw):
        area = L.nc + k
        blk = L.dfig_block(k)
        delta = z[L.delta][area]
        local = np.concatenate([z[blk], [delta]])
        own = (dfig_power_output(z[blk], p.dfigs[k]) - delta) / p.tau_delta[area]
        f_local = np.concatenate([f[blk], [own]])
        G = np.zeros((7, 1))
        G[VW, 0] = sig[k]
        S = lambda y, k=k, area=area: storage_S3_unit(  # noqa: E731
            y[:6], y[6], s.x_bar[k], s.delta_bar[area], p.dfigs[k], p.tau_delta[area]
        )
        out[k] = ito_derivative_numeric(S, local, f_local, G)
    return out


def grid_rate_bound(z, loop: ClosedLoop) -> float:
    """Dissipation the grid storage must obey: ``-|.|^2 - omega' psi omega + omega'(P - P_bar)``."""
    L, p, s = loop.layout, loop.plant, loop.steady
    g = p.grid
    theta, omega, V = z[L.theta], z[L.omega], z[L.voltage]
    r = build_E_matrix(p.topology, g.chi_d, theta) @ V - exciter_reference(g.E_f, g.chi_d)
    P = loop.generation(z)
    return float(-r @ (g.chi_d / g.tau_v * r) - omega @ (g.psi * omega) + omega @ (P - s.P_bar))


def dissipation_terms(z, loop: ClosedLoop) -> dict[str, float]:
    """The closed-loop ``LS`` split into its sign-definite pieces plus the DFIG excess.

    ``voltage + frequency + governor + consensus + dfig_excess`` equals ``LS``.
    The first four are never positive; ``dfig_excess`` is
    ``sum_i LS3_i + omega_i (P_wi - P_wi^opt)``, which is the slack each DFIG
    controller leaves against its supply rate.
    """
    L, p, s = loop.layout, loop.plant, loop.steady
    g = p.grid
    z = np.asarray(z, dtype=float)
    theta, omega, V = z[L.theta], z[L.omega], z[L.voltage]
    r = build_E_matrix(p.topology, g.chi_d, theta) @ V - exciter_reference(g.E_f, g.chi_d)
    delta = z[L.delta]
    y = p.cost.q * (delta - s.delta_bar)
    return {
        "voltage": float(-r @ (g.chi_d / g.tau_v * r)),
        "frequency": float(-omega @ (g.psi * omega)),
        "governor": float(-np.sum(p.xi * (delta[: L.nc] - z[L.P_c]) ** 2)),
        "consensus": float(-y @ (p.laplacian @ y)),
        "dfig_excess": float(np.sum(dfig_block_rates(z, loop) - dfig_supply_rate(z, loop))),
    }


# --- audit ------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class AuditReport:
    checks: list[CheckResult] = field(default_factory=list)
    assumption2_min_eig: float = float("nan")
    assumption4_margins: list[float] = field(default_factory=list)
    gradient_norm_at_eq: float = float("nan")
    hessian_min_eig: float = float("nan")
    passivity_violations: int = 0
    worst_passivity_margin: float = float("nan")
    dfig_violations: int = 0
    worst_dfig_margin: float = float("nan")
    lyapunov_decrement_stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, margin: float, detail: str = ""):
        self.checks.append(CheckResult(name, bool(passed), float(margin), detail))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        d["failed"] = self.failed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)

    def summary(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28} margin {c.margin:+.6e}  {c.detail}" for c in self.checks]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def equilibrium_certificate(loop: ClosedLoop) -> tuple[float, float]:
    """``(|grad S|_inf, min eig of the Hessian)`` at the loop's steady state."""
    S = storage_function(loop)
    z = loop.equilibrium()
    grad = gradient_fd(S, z)
    H = hessian_fd(S, z)
    return float(np.abs(grad).max()), float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())


def passivity_audit(samples, loop: ClosedLoop, report: AuditReport | None = None) -> AuditReport:
    """Audit recorded closed-loop states ``samples`` (rows are flat states) around ``loop``.

    Checks ``LS <= 0`` and ``LS3_i <= -omega_i (P_wi - P_wi^opt)`` at every sample,
    each with slack ``1e-6 (1 + |supply|)``, plus the equilibrium certificate.
    """
    report = AuditReport() if report is None else report
    samples = np.atleast_2d(np.asarray(samples, dtype=float))

    grad_norm, hess_min = equilibrium_certificate(loop)
    report.gradient_norm_at_eq, report.hessian_min_eig = grad_norm, hess_min
    report.add("gradient_at_equilibrium", grad_norm < GRADIENT_TOL, GRADIENT_TOL - grad_norm)
    report.add("hessian_positive", hess_min > PD_MARGIN, hess_min - PD_MARGIN)

    worst, worst_dfig, bad, bad_dfig = np.inf, np.inf, 0, 0
    for z in samples:
        LS = ito_derivative(z, loop)
        m = 1e-6 - LS
        worst = min(worst, m)
        bad += m < 0
        supply = dfig_supply_rate(z, loop)
        md = supply + 1e-6 * (1 + np.abs(supply)) - dfig_block_rates(z, loop)
        worst_dfig = min(worst_dfig, float(md.min()))
        bad_dfig += int(np.sum(md < 0))
    report.passivity_violations, report.worst_passivity_margin = int(bad), float(worst)
    report.dfig_violations, report.worst_dfig_margin = int(bad_dfig), float(worst_dfig)
    report.add("closed_loop_dissipation", bad == 0, worst, f"{bad} of {len(samples)} samples")
    report.add("dfig_passivity", bad_dfig == 0, worst_dfig, f"{bad_dfig} of {len(samples) * loop.layout.nw} unit samples")
    return report


def lyapunov_decrement(S_values) -> dict:
    """Summary of ``S`` along one recorded path: largest increase and its location."""
    S_values = np.asarray(S_values, dtype=float)
    dS = np.diff(S_values)
    if dS.size == 0:
        return {"S0": float(S_values[0]) if S_values.size else 0.0, "max_increase": 0.0, "at": -1, "monotone_tol": 0.0}
    k = int(np.argmax(dS))
    tol = 1e-9 * abs(S_values[0])
    return {"S0": float(S_values[0]), "max_increase": float(dS[k]), "at": k, "monotone_tol": tol}


__all__ = [
    "AuditReport",
    "CheckResult",
    "check_assumption2",
    "check_assumption4",
    "diffusion_matrix",
    "dissipation_terms",
    "dfig_block_rates",
    "dfig_block_rates_numeric",
    "dfig_supply_rate",
    "equilibrium_certificate",
    "gradient_fd",
    "grid_rate_bound",
    "hessian_fd",
    "ito_derivative",
    "ito_derivative_numeric",
    "lyapunov_decrement",
    "passivity_audit",
    "schur_matrix",
    "storage_S1",
    "storage_S2",
    "storage_S3",
    "storage_S3_unit",
    "total_storage",
]
