"""Compiled kernel vs the pure-Python fallback on the bundled four-area scenario.

    python3 benchmarks/bench_kernel.py [--steps N] [--repeat R]
"""

import argparse
import time

import numpy as np

from olfc import kernel
from olfc.config import load_bundled
from olfc.engine import SimConfig, simulate_path
from olfc.system import ClosedLoop


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=5000, help="EM steps per segment")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = load_bundled()
    loop = ClosedLoop.at_load(cfg.plant)
    rng = np.random.default_rng(0)
    z0 = loop.equilibrium() + rng.normal(scale=0.01, size=loop.layout.size)
    steps = np.full(args.steps, cfg.simulation.dt)
    noise = rng.standard_normal((args.steps, loop.layout.nw))

    backends = ["python"] + (["compiled"] if kernel.compiled_available() else [])
    rows = {}
    for b in backends:
        k = kernel.make_kernel(loop, b)
        drift = best_of(lambda k=k: [k.drift(z0) for _ in range(1000)], args.repeat) / 1000
        seg = best_of(lambda k=k: k.run_segment(z0, steps, noise, 100, 0), args.repeat)
        sim = SimConfig(dt=cfg.simulation.dt, horizon=10.0, record_stride=100, backend=b)
        path = best_of(lambda sim=sim: simulate_path(cfg.scenario(), sim, 0), 1)
        rows[b] = (drift, seg / args.steps, path)

    print(f"{'backend':<10} {'drift [us]':>12} {'EM step [us]':>14} {'10 s path [s]':>14}")
    for b, (d, s, p) in rows.items():
        print(f"{b:<10} {d * 1e6:>12.2f} {s * 1e6:>14.2f} {p:>14.3f}")
    if len(rows) == 2:
        py, c = rows["python"], rows["compiled"]
        print(f"speed-up   {py[0] / c[0]:>12.1f}x {py[1] / c[1]:>13.1f}x {py[2] / c[2]:>13.1f}x")
        a = kernel.make_kernel(loop, "compiled").run_segment(z0, steps, noise, 100, 0)[0]
        b = kernel.PyKernel(loop).run_segment(z0, steps, noise, 100, 0)[0]
        print(f"max |compiled - python| after {args.steps} steps: {np.abs(a - b).max():.2e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
