"""Backend selection for the stepping hot loop.

The compiled extension ``olfc._kernel`` is used when it imports; otherwise
``PyKernel`` runs the same segment loop on top of ``ClosedLoop.drift``.
Set ``OLFC_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from .system import CONTROLLERS, ClosedLoop

try:
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build
    _kernel = None

MODES = {name: k for k, name in enumerate(CONTROLLERS)}
N_DFIG_COLS = 25


def compiled_available() -> bool:
    return _kernel is not None


def default_backend() -> str:
    forced = os.environ.get("OLFC_BACKEND", "").strip().lower()
    if forced in ("python", "compiled"):
        if forced == "compiled" and _kernel is None:
            raise ImportError("OLFC_BACKEND=compiled but the extension is not built")
        return forced
    return "compiled" if _kernel is not None else "python"


BACKEND = default_backend()


def pack(loop: ClosedLoop) -> dict:
    """Flatten a closed loop into the arrays the compiled kernel reads."""
    p, L = loop.plant, loop.layout
    t, g = p.topology, p.grid
    edges = np.array(t.edges, dtype=np.int64).reshape(-1, 2)
    prefactor = np.ones(t.n_areas)
    prefactor[: t.n_conventional] = 1.0 / p.xi
    dp = np.zeros((L.nw, N_DFIG_COLS))
    for k, ctx in enumerate(loop.contexts):
        d, w = ctx.params, ctx.wind
        k1 = d.air_density * np.pi * d.rotor_radius**2 * d.C_Q / d.torque_base
        dp[k, :13] = [d.R_s, d.R_r, d.X_s, d.X_r, d.X_m, d.H, d.f_b, d.V_t, d.torque_coefficient,
                      w.mu_w, w.sigma_w, w.v_pred, k1]
        dp[k, 13:19] = ctx.x_bar
        dp[k, 19:21] = ctx.u_bar
        dp[k, 21:] = [ctx.P_w_opt, ctx.delta_bar, ctx.epsilon_guard, p.damping_gain]
    return dict(
        dims=(L.n, L.m, L.nc, L.nw),
        ei=edges[:, 0].copy(),
        ej=edges[:, 1].copy(),
        B_line=t.B_line,
        B_self=t.B_self,
        grid=np.vstack([g.tau_p, g.tau_v, g.psi, g.chi_d, g.E_f, g.P_load]),
        lap=np.asarray(p.laplacian, dtype=float),
        area=np.vstack([p.cost.q, p.cost.Z, prefactor, p.tau_delta]),
        gov=np.vstack([p.tau_c, p.xi]) if L.nc else np.zeros((2, 0)),
        dp=dp,
        mode=MODES[p.controller],
    )


class PyKernel:
    """Reference implementation of the compiled ``Kernel`` interface."""

    def __init__(self, loop: ClosedLoop):
        self.loop = loop
        self.size = loop.layout.size
        self._wind = loop.layout.wind_indices
        self._sigma = loop.plant.sigma_w

    def drift(self, z):
        return self.loop.drift(z)

    def run_segment(self, z0, steps, noise, stride, offset, milstein=False):
        z = np.array(z0, dtype=float, copy=True)
        steps = np.asarray(steps, dtype=float)
        noise = np.asarray(noise, dtype=float).reshape(steps.size, -1)
        before = self.loop.guard_hits
        recs, idx = [], []
        for s, h in enumerate(steps):
            f = self.loop.drift(z)
            v = z[self._wind]
            dw = np.sqrt(h) * noise[s]
            incr = self._sigma * v * dw
            if milstein:
                incr = incr + 0.5 * self._sigma**2 * v * (dw * dw - h)
            z = z + f * h
            z[self._wind] = z[self._wind] + incr
            if not np.all(np.isfinite(z)):
                return z, _stack(recs, self.size), np.array(idx, dtype=np.int64), self.loop.guard_hits - before, s
            if stride > 0 and (offset + s + 1) % stride == 0:
                recs.append(z.copy())
                idx.append(offset + s + 1)
        return z, _stack(recs, self.size), np.array(idx, dtype=np.int64), self.loop.guard_hits - before, -1


def _stack(rows, size):
    return np.array(rows).reshape(-1, size)


def make_kernel(loop: ClosedLoop, backend: str | None = None):
    backend = BACKEND if backend is None else backend
    if backend == "compiled":
        if _kernel is None:
            raise ImportError("compiled kernel is not available")
        return _kernel.Kernel(**pack(loop))
    if backend == "python":
        return PyKernel(loop)
    raise ValueError(f"unknown backend {backend!r}")


__all__ = ["BACKEND", "PyKernel", "compiled_available", "make_kernel", "pack"]
