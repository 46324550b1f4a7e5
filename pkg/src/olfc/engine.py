"""Euler-Maruyama integration of the closed loop, single paths and ensembles.

Every path owns a counter-based generator (Philox) keyed by
``(master_seed, path_index)``, so a path is reproducible on its own and an
ensemble is independent of the order in which paths are executed.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernel import make_kernel
from .network import ConfigurationError
from .system import ClosedLoop, Plant
from .units import WindParams

SCHEMES = ("em", "milstein")


class IntegrationDiverged(RuntimeError):
    def __init__(self, step: int, time: float, path_index: int | None = None):
        where = "" if path_index is None else f" on path {path_index}"
        super().__init__(f"integration diverged at step {step} (t = {time:.6g} s){where}")
        self.step, self.time, self.path_index = step, time, path_index


class EnsembleError(RuntimeError):
    def __init__(self, failures: dict[int, str]):
        lines = "; ".join(f"path {k}: {v}" for k, v in sorted(failures.items()))
        super().__init__(f"{len(failures)} path(s) failed: {lines}")
        self.failures = failures


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 30.0
    master_seed: int = 0
    n_paths: int = 1
    record_stride: int = 100
    scheme: str = "em"
    backend: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.horizon != 0 and self.horizon < self.dt:
            raise ConfigurationError("horizon must be zero or at least dt")
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be at least 1")
        if self.record_stride < 1:
            raise ConfigurationError("record_stride must be at least 1")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigurationError("master_seed must fit in 64 bits")


@dataclass(frozen=True)
class ScheduleEvent:
    """Piecewise-constant load from ``time`` on; optionally resets the wind deviations."""

    time: float
    P_load: np.ndarray
    wind_deviation: np.ndarray | None = None


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(seq))


def path_seed(master_seed: int, path_index: int) -> int:
    """64-bit fingerprint of a path's substream, reported alongside trajectories."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def step_lengths(t0: float, t1: float, dt: float) -> np.ndarray:
    """Full steps of ``dt`` from ``t0`` with a shortened last step landing on ``t1``."""
    span = t1 - t0
    if span <= 0:
        return np.zeros(0)
    n = int(math.floor(span / dt + 1e-9))
    rest = span - n * dt
    steps = np.full(n, dt)
    if rest > 1e-9 * dt:
        steps = np.append(steps, rest)
    return steps


def em_step(z, dt: float, noise, loop: ClosedLoop, scheme: str = "em", step: int = 0) -> np.ndarray:
    """One explicit step: ``z + f(z) dt`` plus ``sigma v sqrt(dt) xi`` on every wind channel.

    ``step`` is only used to label an ``IntegrationDiverged`` error.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    noise = np.asarray(noise, dtype=float).reshape(-1)
    L = loop.layout
    if noise.size != L.nw:
        raise ValueError("one standard-normal draw per wind area is required")
    f = loop.drift(z)
    v = z[L.wind_indices]
    sig = loop.plant.sigma_w
    dw = math.sqrt(dt) * noise
    incr = sig * v * dw
    if scheme == "milstein":
        incr = incr + 0.5 * sig**2 * v * (dw * dw - dt)
    out = z + f * dt
    out[L.wind_indices] = out[L.wind_indices] + incr
    if not np.all(np.isfinite(out)):
        raise IntegrationDiverged(step, (step + 1) * dt)
    return out


@dataclass
class Segment:
    t0: float
    t1: float
    loop: ClosedLoop
    wind_deviation: np.ndarray | None


class Scenario:
    """A plant plus its load schedule, with one solved steady state per schedule entry."""

    def __init__(self, plant: Plant, schedule):
        events = sorted(schedule, key=lambda e: e.time)
        if not events or events[0].time != 0.0:
            raise ConfigurationError("the load schedule must start at t = 0")
        times = [e.time for e in events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("schedule times must be strictly increasing")
        self.plant = plant
        self.events = events
        self.loops = [ClosedLoop.at_load(plant, e.P_load) for e in events]

    def initial_state(self) -> np.ndarray:
        z = self.loops[0].equilibrium()
        dev = self.events[0].wind_deviation
        if dev is not None:
            z[self.loops[0].layout.wind_indices] = dev
        return z

    def segments(self, horizon: float) -> list[Segment]:
        out = []
        for k, (e, loop) in enumerate(zip(self.events, self.loops)):
            if e.time > horizon:
                break
            t1 = self.events[k + 1].time if k + 1 < len(self.events) else horizon
            out.append(Segment(e.time, min(t1, horizon), loop, e.wind_deviation if k else None))
        return out

    def loop_at(self, t: float) -> ClosedLoop:
        """Closed loop active at time ``t`` (events take effect at their own instant)."""
        k = max(i for i, e in enumerate(self.events) if e.time <= t + 1e-12)
        return self.loops[k]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    path_index: int
    path_seed: int
    guard_events: int
    segment: np.ndarray  # index of the active schedule entry per record

    def __len__(self) -> int:
        return self.times.size


def simulate_path(
    scenario: Scenario, config: SimConfig, path_index: int = 0, initial: np.ndarray | None = None
) -> Trajectory:
    rng = path_rng(config.master_seed, path_index)
    z = scenario.initial_state() if initial is None else np.array(initial, dtype=float)
    nw = scenario.plant.layout.nw
    times, states, seg_ids = [0.0], [z.copy()], [0]
    hits, offset = 0, 0
    for k, seg in enumerate(scenario.segments(config.horizon)):
        if seg.wind_deviation is not None:
            z[seg.loop.layout.wind_indices] = seg.wind_deviation
        steps = step_lengths(seg.t0, seg.t1, config.dt)
        if steps.size == 0:
            continue
        noise = rng.standard_normal((steps.size, nw))
        kernel = make_kernel(seg.loop, config.backend)
        z, recs, idx, h, bad = kernel.run_segment(
            z, steps, noise, config.record_stride, offset, config.scheme == "milstein"
        )
        hits += h
        if bad >= 0:
            raise IntegrationDiverged(offset + bad + 1, seg.t0 + float(steps[: bad + 1].sum()), path_index)
        # times from step counts, not a running sum; the last step lands on t1 exactly
        at = seg.t0 + config.dt * np.arange(1, steps.size + 1)
        at[-1] = seg.t1
        for r, i in zip(recs, idx):
            times.append(float(at[i - offset - 1]))
            states.append(r)
            seg_ids.append(k)
        offset += steps.size
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        path_index=path_index,
        path_seed=path_seed(config.master_seed, path_index),
        guard_events=int(hits),
        segment=np.array(seg_ids, dtype=np.int64),
    )


# --- derived quantities ---------------------------------------------------------


def trajectory_power(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    return np.array([scenario.loops[s].generation(z) for s, z in zip(traj.segment, traj.states)])


def trajectory_storage(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    from .audit import total_storage

    return np.array([total_storage(z, scenario.loops[s]) for s, z in zip(traj.segment, traj.states)])


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_state: np.ndarray
    var_state: np.ndarray
    mean_power: np.ndarray
    var_power: np.ndarray
    mean_storage: np.ndarray
    var_storage: np.ndarray
    n_paths: int
    guard_events: int
    trajectories: list[Trajectory] = field(repr=False, default_factory=list)
    storage_paths: np.ndarray | None = field(repr=False, default=None)
    power_paths: np.ndarray | None = field(repr=False, default=None)

    def stderr_state(self) -> np.ndarray:
        return np.sqrt(self.var_state / self.n_paths)


def _run_one(args):
    scenario, config, index = args
    try:
        return index, simulate_path(scenario, config, index), None
    except (IntegrationDiverged, FloatingPointError) as exc:
        return index, None, str(exc)


def run_ensemble(scenario: Scenario, config: SimConfig, workers: int = 1, keep_paths: bool = True) -> EnsembleResult:
    """Simulate ``config.n_paths`` paths and summarise them at the recorded times.

    Statistics are accumulated in path-index order whatever ``workers`` is, so
    results are bit-identical across schedules.
    """
    jobs = [(scenario, config, i) for i in range(config.n_paths)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    failures = {i: msg for i, _, msg in results if msg is not None}
    if failures:
        raise EnsembleError(failures)
    trajs = [t for _, t, _ in results]

    states = np.stack([t.states for t in trajs])
    power = np.stack([trajectory_power(t, scenario) for t in trajs])
    storage = np.stack([trajectory_storage(t, scenario) for t in trajs])
    ddof = 1 if len(trajs) > 1 else 0
    return EnsembleResult(
        times=trajs[0].times,
        mean_state=states.mean(axis=0),
        var_state=states.var(axis=0, ddof=ddof),
        mean_power=power.mean(axis=0),
        var_power=power.var(axis=0, ddof=ddof),
        mean_storage=storage.mean(axis=0),
        var_storage=storage.var(axis=0, ddof=ddof),
        n_paths=len(trajs),
        guard_events=sum(t.guard_events for t in trajs),
        trajectories=trajs if keep_paths else [],
        storage_paths=storage,
        power_paths=power,
    )


def convergence_summary(result: EnsembleResult, scenario: Scenario) -> dict:
    """Final-time frequency and dispatch errors of the ensemble mean."""
    loop = scenario.loop_at(float(result.times[-1]))
    L = loop.layout
    omega = result.mean_state[-1][L.omega]
    P = result.mean_power[-1]
    P_opt = loop.steady.P_bar
    rel = np.abs(P - P_opt) / np.maximum(np.abs(P_opt), 0.1)
    return {
        "time": float(result.times[-1]),
        "max_abs_omega": float(np.abs(omega).max()),
        "max_rel_power_error": float(rel.max()),
        "P_mean": P.tolist(),
        "P_opt": P_opt.tolist(),
    }


# --- the wind equation on its own ------------------------------------------------


def wind_em_paths(v0: float, wind: WindParams, increments: np.ndarray, dt: float, scheme: str = "em") -> np.ndarray:
    """EM (or Milstein) iterates of the wind SDE for a batch of increment rows.

    ``increments`` has shape ``(n_paths, n_steps)``; returns ``(n_paths, n_steps + 1)``.
    """
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    out = np.empty((increments.shape[0], increments.shape[1] + 1))
    out[:, 0] = v0
    v = out[:, 0].copy()
    for k in range(increments.shape[1]):
        dw = increments[:, k]
        nv = v - wind.mu_w * v * dt + wind.sigma_w * v * dw
        if scheme == "milstein":
            nv = nv + 0.5 * wind.sigma_w**2 * v * (dw * dw - dt)
        v = nv
        out[:, k + 1] = v
    return out


__all__ = [
    "EnsembleError",
    "EnsembleResult",
    "IntegrationDiverged",
    "ScheduleEvent",
    "Scenario",
    "SimConfig",
    "Trajectory",
    "convergence_summary",
    "em_step",
    "path_rng",
    "path_seed",
    "run_ensemble",
    "simulate_path",
    "step_lengths",
    "trajectory_power",
    "trajectory_storage",
    "wind_em_paths",
]
