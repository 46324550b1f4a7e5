# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop drift and Euler-Maruyama segment loop.

Mirrors ``ClosedLoop.drift`` operation for operation; parameters arrive packed
by ``olfc.kernel.pack``.
"""

from libc.math cimport sin, cos, sqrt, fabs, isfinite

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    RS = 0
    RR = 1
    XS = 2
    XR = 3
    XM = 4
    HH = 5
    FB = 6
    VT = 7
    KAPPA = 8
    MU = 9
    SIGMA = 10
    VPRED = 11
    K1C = 12
    XBAR = 13
    UBAR = 19
    PWOPT = 21
    DBAR = 22
    EPS = 23
    GAIN = 24
    NCOL = 25

cdef enum:
    MODE_LITERAL = 0
    MODE_EXACT = 1
    MODE_DAMPED = 2
    MODE_PASSIVE = 3

cdef double RATE_FLOOR = 1e-12


cdef struct Dims:
    int n
    int m
    int nc
    int nw


cdef inline void dfig_drift(const double[:] p, const double* x, double vdr, double vqr, double* out) noexcept nogil:
    cdef double Rs = p[RS], Rr = p[RR], Xs = p[XS], Xr = p[XR], Xm = p[XM]
    cdef double K = Xs * Xr - Xm * Xm
    cdef double s = p[FB] / K
    cdef double fr = x[4]
    cdef double i0 = x[0], i1 = x[1], i2 = x[2], i3 = x[3]
    cdef double bs = -s * Xm, br = s * Xs
    out[0] = s * (-Rs * Xr * i0 + (K + Xm * Xm * fr) * i1 + Rr * Xm * i2 + Xm * Xr * fr * i3)
    out[1] = s * (-(K + Xm * Xm * fr) * i0 - Rs * Xr * i1 - Xm * Xr * fr * i2 + Rr * Xm * i3)
    out[2] = s * (Rs * Xm * i0 - Xs * Xm * fr * i1 - Rr * Xs * i2 + (K - Xs * Xr * fr) * i3)
    out[3] = s * (Xs * Xm * fr * i0 + Rs * Xm * i1 + (Xs * Xr * fr - K) * i2 - Rr * Xs * i3)
    out[0] += s * Xr * p[VT] + bs * vdr
    out[1] += bs * vqr
    out[2] += -s * Xm * p[VT] + br * vdr
    out[3] += br * vqr
    cdef double wv = p[VPRED] + x[5]
    cdef double tm = 0.5 * p[KAPPA] * wv * wv
    cdef double te = Xm * (i0 * i3 - i1 * i2)
    out[4] = (tm - te) / (2.0 * p[HH])
    out[5] = -p[MU] * x[5]


cdef inline double power_out(const double[:] p, const double* x) noexcept nogil:
    return -(p[XM] / p[XS]) * x[3] * x[4]


cdef inline void input_gain(const double[:] p, const double* x, double* g) noexcept nogil:
    cdef double Xs = p[XS], Xr = p[XR], Xm = p[XM]
    cdef double K = Xs * Xr - Xm * Xm
    cdef double w = K / (p[FB] * Xr)
    cdef double bs = -p[FB] / K * Xm, br = p[FB] / K * Xs
    g[0] = w * (x[0] - p[XBAR]) * bs + w * (x[2] - p[XBAR + 2]) * br
    g[1] = w * (x[1] - p[XBAR + 1]) * bs + w * (x[3] - p[XBAR + 3]) * br


cdef inline double ito_rate(const double[:] p, const double* x, double delta, double vdr, double vqr) noexcept nogil:
    cdef double f[6]
    cdef double K = p[XS] * p[XR] - p[XM] * p[XM]
    cdef double w = K / (p[FB] * p[XR])
    cdef int j
    dfig_drift(p, x, vdr, vqr, f)
    cdef double rate = 0.0
    for j in range(4):
        rate += w * (x[j] - p[XBAR + j]) * f[j]
    rate += 4.0 * p[HH] * (x[4] - p[XBAR + 4]) * f[4]
    rate += 2.0 * p[KAPPA] * x[5] * f[5] + p[KAPPA] * (p[SIGMA] * x[5]) * (p[SIGMA] * x[5])
    rate += (delta - p[DBAR]) * (power_out(p, x) - delta)
    return rate


cdef inline double target_rate(const double[:] p, const double* x, double omega, double delta) noexcept nogil:
    cdef double e0 = x[0] - p[XBAR], e1 = x[1] - p[XBAR + 1]
    cdef double e2 = x[2] - p[XBAR + 2], e3 = x[3] - p[XBAR + 3]
    cdef double dfr = x[4] - p[XBAR + 4]
    cdef double vt = x[5]
    cdef double Pw = power_out(p, x)
    cdef double kap = p[KAPPA], mu = p[MU], sg = p[SIGMA], v = p[VPRED]
    return (
        -p[RS] * (e0 * e0 + e1 * e1)
        - p[RR] * (e2 * e2 + e3 * e3)
        - (delta - Pw) * (delta - Pw)
        - omega * (Pw - p[PWOPT])
        - (delta - p[DBAR]) * (delta - p[DBAR])
        - dfr * dfr
        - kap * (mu - 0.5 * sg * sg - v - dfr) * vt * vt
        - kap * v * (dfr + vt) * (dfr + vt)
    )


cdef inline int literal_law(const double[:] p, const double* x, double omega, double delta, double* u) noexcept nogil:
    cdef double Xs = p[XS], Xr = p[XR], Xm = p[XM], Rs = p[RS], Rr = p[RR]
    cdef double K = Xs * Xr - Xm * Xm
    cdef double Xu = Xm / Xs
    cdef const double* xb = &p[XBAR]
    cdef double dfr = x[4] - xb[4]
    cdef double Pw = power_out(p, x)
    cdef double v = p[VPRED]
    cdef double d = Xr * (x[2] - xb[2]) - Xm * (x[0] - xb[0])
    cdef double K1 = p[K1C] * (dfr * v * v + v * dfr * dfr) + dfr * dfr
    cdef double K2 = (x[0] - Xm / Xs * x[2]) * p[VT] + omega * (Pw - p[PWOPT])
    cdef double cross = Rr * Xm / Xr + Rs * Xm / Xs
    cdef double K3 = 2.0 * xb[4] * Xm * (x[0] * x[3] - x[1] * x[2]) + cross * x[2] * x[0] + cross * x[3] * x[1]
    cdef double xPxb = Rs * xb[0] * xb[0] + Rs * xb[1] * xb[1] + Rr * xb[2] * xb[2] + Rr * xb[3] * xb[3]
    cdef double xPx = Rs * xb[0] * x[0] + Rs * xb[1] * x[1] + Rr * xb[2] * x[2] + Rr * xb[3] * x[3]
    cdef double hg[6]
    dfig_drift(p, x, 0.0, 0.0, hg)
    cdef double s = K / p[FB]
    cdef double xPsiH = (
        s * xb[0] / Xr * xb[0] * hg[0]
        + s * xb[1] / Xr * xb[1] * hg[1]
        + s * xb[2] / Xs * xb[2] * hg[2]
        + s * xb[3] / Xs * xb[3] * hg[3]
    )
    cdef double D1 = -Xu * x[3] * x[4] + Xu * xb[3] * xb[4]
    cdef double D2 = (Pw - p[PWOPT]) * delta
    cdef double D3 = (delta - Pw) * (delta - Pw) - (Pw - p[PWOPT]) * p[PWOPT]
    cdef int hit = 0
    if fabs(d) < p[EPS]:
        hit = 1
        d = p[EPS] if d >= 0 else -p[EPS]
    cdef double L = Xr / d
    u[0] = -L * (K1 + K2 + K3 + xPxb + xPx + xPsiH)
    u[1] = -L * (D1 * omega + D2 * delta + D3)
    return hit


cdef inline int rotor_voltages(const double[:] p, int mode, const double* x, double omega, double delta, double* u) noexcept nogil:
    cdef double g[2]
    cdef double g2, phi, den, excess, supply, gain
    cdef int hit = 0
    if mode == MODE_LITERAL:
        return literal_law(p, x, omega, delta, u)
    input_gain(p, x, g)
    g2 = g[0] * g[0] + g[1] * g[1]
    den = g2 if g2 > p[EPS] * p[EPS] else p[EPS] * p[EPS]
    if mode == MODE_EXACT:
        phi = target_rate(p, x, omega, delta) - ito_rate(p, x, delta, p[UBAR], p[UBAR + 1])
        hit = g2 < p[EPS] * p[EPS]
        u[0] = p[UBAR] + phi * g[0] / den
        u[1] = p[UBAR + 1] + phi * g[1] / den
        return hit
    gain = p[GAIN]
    u[0] = p[UBAR] - gain * g[0]
    u[1] = p[UBAR + 1] - gain * g[1]
    if mode == MODE_PASSIVE:
        supply = -omega * (power_out(p, x) - p[PWOPT])
        excess = ito_rate(p, x, delta, u[0], u[1]) - supply
        if excess > RATE_FLOOR * (1.0 + fabs(supply)):
            hit = g2 < p[EPS] * p[EPS]
            u[0] = u[0] - excess * g[0] / den
            u[1] = u[1] - excess * g[1] / den
    return hit


cdef int drift_impl(
    Dims D,
    const double[:] z,
    double[:] out,
    const long[:] ei,
    const long[:] ej,
    const double[:] B_line,
    const double[:] B_self,
    const double[:, :] grid,
    const double[:, :] lap,
    const double[:, :] area,
    const double[:, :] gov,
    const double[:, :] dp,
    int mode,
    double[:] P,
    double[:] work,
) noexcept nogil:
    """Fill ``out`` with the drift at ``z``; return the number of guard hits."""
    cdef int n = D.n, m = D.m, nc = D.nc, nw = D.nw
    cdef int o_w = m, o_v = m + n, o_pc = m + 2 * n, o_d = m + 2 * n + nc, o_x = m + 3 * n + nc
    cdef int i, j, k, a, b
    cdef double f, c, acc
    cdef double u[2]
    cdef int hits = 0
    # grid rows of ``grid``: tau_p, tau_v, psi, chi_d, E_f, P_load
    # area rows of ``area``: q, Z, prefactor, tau_delta

    for i in range(nc):
        P[i] = z[o_pc + i]
    for k in range(nw):
        P[nc + k] = power_out(dp[k], &z[o_x + 6 * k])

    for k in range(m):
        out[k] = z[o_w + ei[k]] - z[o_w + ej[k]]

    # flows in work[0:n], E V in work[n:2n], q delta + Z in work[2n:3n]
    for i in range(n):
        work[i] = 0.0
        work[n + i] = (1.0 / grid[3, i] - B_self[i]) * z[o_v + i]
        work[2 * n + i] = area[0, i] * z[o_d + i] + area[1, i]
    for k in range(m):
        a = ei[k]
        b = ej[k]
        f = z[o_v + a] * z[o_v + b] * B_line[k] * sin(z[k])
        work[a] += f
        work[b] -= f
        c = -B_line[k] * cos(z[k])
        work[n + a] += c * z[o_v + b]
        work[n + b] += c * z[o_v + a]
    for i in range(n):
        out[o_w + i] = (-grid[2, i] * z[o_w + i] + P[i] - grid[5, i] - work[i]) / grid[0, i]
        out[o_v + i] = (-grid[3, i] * work[n + i] + grid[4, i]) / grid[1, i]

    for i in range(nc):
        out[o_pc + i] = (-z[o_pc + i] - z[o_w + i] / gov[1, i] + z[o_d + i]) / gov[0, i]

    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += lap[i, j] * work[2 * n + j]
        out[o_d + i] = (-z[o_d + i] + P[i] - area[2, i] * area[0, i] * acc) / area[3, i]

    for k in range(nw):
        hits += rotor_voltages(dp[k], mode, &z[o_x + 6 * k], z[o_w + nc + k], z[o_d + nc + k], u)
        dfig_drift(dp[k], &z[o_x + 6 * k], u[0], u[1], &out[o_x + 6 * k])
    return hits


cdef class Kernel:
    """Packed closed-loop data with compiled drift and EM stepping."""

    cdef Dims D
    cdef long[:] ei
    cdef long[:] ej
    cdef double[:] B_line
    cdef double[:] B_self
    cdef double[:, :] grid
    cdef double[:, :] lap
    cdef double[:, :] area
    cdef double[:, :] gov
    cdef double[:, :] dp
    cdef int mode
    cdef double[:] P
    cdef double[:] work
    cdef double[:] vbuf

    def __init__(self, dims, ei, ej, B_line, B_self, grid, lap, area, gov, dp, int mode):
        self.D.n, self.D.m, self.D.nc, self.D.nw = dims
        self.ei = np.ascontiguousarray(ei, dtype=np.int64)
        self.ej = np.ascontiguousarray(ej, dtype=np.int64)
        self.B_line = np.ascontiguousarray(B_line, dtype=np.float64)
        self.B_self = np.ascontiguousarray(B_self, dtype=np.float64)
        self.grid = np.ascontiguousarray(grid, dtype=np.float64)
        self.lap = np.ascontiguousarray(lap, dtype=np.float64)
        self.area = np.ascontiguousarray(area, dtype=np.float64)
        self.gov = np.ascontiguousarray(gov, dtype=np.float64).reshape(2, -1)
        self.dp = np.ascontiguousarray(dp, dtype=np.float64).reshape(-1, NCOL)
        self.mode = mode
        self.P = np.zeros(self.D.n)
        self.work = np.zeros(3 * self.D.n)
        self.vbuf = np.zeros(max(self.D.nw, 1))

    @property
    def size(self):
        return self.D.m + 3 * self.D.n + self.D.nc + 6 * self.D.nw

    def drift(self, z):
        cdef double[:] zz = np.ascontiguousarray(z, dtype=np.float64)
        out = np.empty(self.size)
        cdef double[:] oo = out
        with nogil:
            drift_impl(self.D, zz, oo, self.ei, self.ej, self.B_line, self.B_self, self.grid,
                       self.lap, self.area, self.gov, self.dp, self.mode, self.P, self.work)
        return out

    def run_segment(self, z0, double[:] steps, double[:, :] noise, int stride, int offset, bint milstein=False):
        """Advance ``z0`` through the step lengths ``steps`` with standard-normal ``noise``.

        A state is recorded after every step whose global index (``offset`` + local,
        1-based) is a multiple of ``stride``.  Returns ``(z, records, guard_hits,
        diverged_at)`` with ``diverged_at = -1`` on success.
        """
        cdef int size = self.size
        cdef int nsteps = steps.shape[0]
        cdef int n = self.D.n, m = self.D.m, nc = self.D.nc, nw = self.D.nw
        cdef int o_x = m + 3 * n + nc
        z = np.array(z0, dtype=np.float64, copy=True)
        cdef double[:] zz = z
        f = np.empty(size)
        cdef double[:] ff = f
        nrec = (offset + nsteps) // stride - offset // stride if stride > 0 else 0
        records = np.empty((nrec, size))
        cdef double[:, :] rec = records
        rec_idx = np.empty(nrec, dtype=np.int64)
        cdef long[:] ridx = rec_idx
        cdef int r = 0, s, i, k, iv
        cdef long hits = 0
        cdef int diverged = -1
        cdef double h, sq, v, dw, sg
        with nogil:
            for s in range(nsteps):
                h = steps[s]
                hits += drift_impl(self.D, zz, ff, self.ei, self.ej, self.B_line, self.B_self, self.grid,
                                   self.lap, self.area, self.gov, self.dp, self.mode, self.P, self.work)
                sq = sqrt(h)
                # explicit scheme: diffusion evaluated on the pre-step wind state
                for k in range(nw):
                    v = zz[o_x + 6 * k + 5]
                    sg = self.dp[k, SIGMA]
                    dw = sq * noise[s, k]
                    self.vbuf[k] = sg * v * dw
                    if milstein:
                        self.vbuf[k] = self.vbuf[k] + 0.5 * sg * sg * v * (dw * dw - h)
                for i in range(size):
                    zz[i] = zz[i] + ff[i] * h
                for k in range(nw):
                    iv = o_x + 6 * k + 5
                    zz[iv] = zz[iv] + self.vbuf[k]
                for i in range(size):
                    if not isfinite(zz[i]):
                        diverged = s
                        break
                if diverged >= 0:
                    break
                if stride > 0 and (offset + s + 1) % stride == 0:
                    for i in range(size):
                        rec[r, i] = zz[i]
                    ridx[r] = offset + s + 1
                    r += 1
        return z, records[:r], rec_idx[:r], int(hits), diverged
