"""``olfc`` command line: dispatch, steady-state, simulate, ensemble, audit.

Exit codes: 0 success, 2 configuration error, 3 solver or integration
failure, 4 audit failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .audit import (
    AuditReport,
    check_assumption2,
    check_assumption4,
    lyapunov_decrement,
    passivity_audit,
)
from .config import ConfigError, ScenarioConfig, load_config, make_manifest, utc_now
from .control import dispatch_price, optimal_dispatch
from .engine import (
    EnsembleError,
    IntegrationDiverged,
    convergence_summary,
    run_ensemble,
    simulate_path,
    trajectory_power,
    trajectory_storage,
)
from .network import ConfigurationError
from .steady import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 2, 3, 4
CSV_FMT = "%.17g"


class CliFailure(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


class AuditFailed(Exception):
    def __init__(self, failed, outputs):
        super().__init__(", ".join(failed))
        self.outputs = outputs


def trajectory_columns(n: int, nw: int) -> list[str]:
    cols = ["time"]
    for name in ("omega", "P", "V", "delta"):
        cols += [f"{name}_{i + 1}" for i in range(n)]
    cols += [f"v_tilde_{k + 1}" for k in range(nw)]
    return cols + ["S"]


def trajectory_table(times, states, power, storage, layout) -> np.ndarray:
    states = np.atleast_2d(states)
    return np.column_stack(
        [
            times,
            states[:, layout.omega],
            power,
            states[:, layout.voltage],
            states[:, layout.delta],
            states[:, layout.wind_indices],
            storage,
        ]
    )


def write_csv(path: Path, table: np.ndarray, columns) -> Path:
    np.savetxt(path, table, fmt=CSV_FMT, delimiter=",", header=",".join(columns), comments="")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    return header, np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))


def gnuplot_script(csv_name: str, n: int, title: str) -> str:
    """Plot script for a trajectory CSV: frequency, power and voltage panels."""
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't [s]'",
        "set multiplot layout 3,1 title '" + title + "'",
    ]
    for label, first in (("omega [p.u.]", 2), ("P [p.u.]", 2 + n), ("V [p.u.]", 2 + 2 * n)):
        plots = ", ".join(f"'{csv_name}' using 1:{first + i} with lines" for i in range(n))
        lines += [f"set ylabel '{label}'", f"plot {plots}"]
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


# --- option plumbing ---------------------------------------------------------------


def common_options(f):
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Scenario JSON.")
    @click.option("--seed", type=click.IntRange(min=0), default=None, help="Master seed override.")
    @click.option("--paths", type=click.IntRange(min=1), default=None, help="Number of sample paths.")
    @click.option("--dt", type=float, default=None, help="Step size [s].")
    @click.option("--horizon", type=float, default=None, help="Final time [s].")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--gnuplot", is_flag=True, help="Also emit a gnuplot script for the CSV output.")
    @functools.wraps(f)
    def wrapper(config_path, seed, paths, dt, horizon, out, gnuplot, **kw):
        started = utc_now()
        try:
            cfg = load_config(config_path).with_overrides(seed=seed, paths=paths, dt=dt, horizon=horizon, out=out)
        except ConfigError as exc:
            raise CliFailure(f"configuration error: {exc}", EXIT_CONFIG) from None
        out_dir = cfg.output_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        name = f.__name__.replace("_", "-")
        try:
            outputs = f(cfg, out_dir, gnuplot, **kw)
        except AuditFailed as exc:
            make_manifest(cfg, name, started, exc.outputs).write(out_dir)
            raise CliFailure(f"audit failed: {exc}", EXIT_AUDIT) from None
        except (ConfigurationError, ValueError) as exc:
            raise CliFailure(f"configuration error: {exc}", EXIT_CONFIG) from None
        except SolverError as exc:
            raise CliFailure(f"steady-state solver failed: {exc}", EXIT_SOLVER) from None
        except (IntegrationDiverged, EnsembleError, FloatingPointError) as exc:
            raise CliFailure(f"integration failed: {exc}", EXIT_SOLVER) from None
        make_manifest(cfg, name, started, outputs).write(out_dir)

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="olfc")
def main():
    """Stochastic optimal load-frequency control of wind-integrated power networks."""


# --- commands --------------------------------------------------------------------------


@main.command("dispatch")
@common_options
def dispatch(cfg: ScenarioConfig, out_dir: Path, gnuplot: bool):
    """Optimal dispatch and marginal cost at every schedule point."""
    model = cfg.plant.cost
    n = cfg.plant.topology.n_areas
    rows = []
    for e in cfg.schedule:
        P = optimal_dispatch(e.P_load, model)
        rows.append(np.concatenate([[e.time], e.P_load, P, [dispatch_price(e.P_load, model)]]))
    table = np.array(rows)
    cols = ["time"] + [f"P_load_{i + 1}" for i in range(n)] + [f"P_opt_{i + 1}" for i in range(n)] + ["lambda"]
    path = write_csv(out_dir / "dispatch.csv", table, cols)

    click.echo(f"{'t [s]':>8} {'area':>5} {'P_load':>10} {'P_opt':>10} {'q_i P_i + z_i':>14}")
    for row in table:
        P = row[1 + n : 1 + 2 * n]
        marginal = model.q * P + model.Z
        for i in range(n):
            t = f"{row[0]:8.3f}" if i == 0 else " " * 8
            click.echo(f"{t} {i + 1:>5d} {row[1 + i]:>10.6f} {P[i]:>10.6f} {marginal[i]:>14.6f}")
        click.echo(f"{'':8} {'sum':>5} {row[1 : 1 + n].sum():>10.6f} {P.sum():>10.6f}   lambda* = {row[-1]:.6f}")
    return [path]


@main.command("steady-state")
@common_options
def steady_state(cfg: ScenarioConfig, out_dir: Path, gnuplot: bool):
    """Solve the operating point for every schedule entry."""
    L = cfg.plant.layout
    report = []
    for e in cfg.schedule:
        s = cfg.plant.with_load(e.P_load).steady_state()
        report.append(
            {
                "time": e.time,
                "theta_bar": s.theta_bar.tolist(),
                "V_bar": s.V_bar.tolist(),
                "P_bar": s.P_bar.tolist(),
                "delta_bar": s.delta_bar.tolist(),
                "dfig_x_bar": s.x_bar.tolist(),
                "dfig_u_bar": s.u_w_bar.tolist(),
                "residual_norm": s.residual_norm,
            }
        )
        click.echo(f"t = {e.time:g} s   residual {s.residual_norm:.3e}")
        click.echo(f"  {'area':>4} {'V_bar':>10} {'P_bar':>10} {'delta_bar':>10}")
        for i in range(L.n):
            click.echo(f"  {i + 1:>4d} {s.V_bar[i]:>10.6f} {s.P_bar[i]:>10.6f} {s.delta_bar[i]:>10.6f}")
        click.echo("  line angles " + " ".join(f"{x:+.6f}" for x in s.theta_bar))
        for k in range(L.nw):
            click.echo(f"  DFIG {k + 1} x_bar " + " ".join(f"{x:.6f}" for x in s.x_bar[k]))
    path = out_dir / "steady_state.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    return [path]


def _write_paths(cfg, scenario, trajs, out_dir, gnuplot, per_path: bool):
    L = cfg.plant.layout
    cols = trajectory_columns(L.n, L.nw)
    outputs, tables = [], []
    for tr in trajs:
        table = trajectory_table(
            tr.times, tr.states, trajectory_power(tr, scenario), trajectory_storage(tr, scenario), L
        )
        tables.append(table)
        if per_path:
            outputs.append(write_csv(out_dir / f"path_{tr.path_index:04d}.csv", table, cols))
    return outputs, tables, cols


def _emit_gnuplot(out_dir: Path, csv_name: str, n: int, title: str) -> Path:
    script = gnuplot_script(csv_name, n, title)
    path = out_dir / (Path(csv_name).stem + ".gp")
    path.write_text(script)
    click.echo(script, nl=False)
    return path


@main.command("simulate")
@common_options
def simulate(cfg: ScenarioConfig, out_dir: Path, gnuplot: bool):
    """Sample paths, one CSV per path plus the ensemble mean."""
    scenario = cfg.scenario()
    trajs = [simulate_path(scenario, cfg.simulation, i) for i in range(cfg.simulation.n_paths)]
    outputs, tables, cols = _write_paths(cfg, scenario, trajs, out_dir, gnuplot, per_path=True)
    mean = np.mean(np.stack(tables), axis=0)
    outputs.append(write_csv(out_dir / "mean.csv", mean, cols))
    if gnuplot:
        outputs.append(_emit_gnuplot(out_dir, "mean.csv", cfg.plant.topology.n_areas, cfg.name))
    guard = sum(t.guard_events for t in trajs)
    click.echo(f"{len(trajs)} path(s) to t = {trajs[0].times[-1]:g} s, guard events {guard}", err=True)
    return outputs


@main.command("ensemble")
@click.option("--workers", type=click.IntRange(min=1), default=1, help="Worker processes.")
@common_options
def ensemble(cfg: ScenarioConfig, out_dir: Path, gnuplot: bool, workers: int = 1):
    """Ensemble mean and variance of every trajectory column, plus a convergence summary."""
    scenario = cfg.scenario()
    res = run_ensemble(scenario, cfg.simulation, workers=workers, keep_paths=False)
    L = cfg.plant.layout
    cols = trajectory_columns(L.n, L.nw)
    mean = trajectory_table(res.times, res.mean_state, res.mean_power, res.mean_storage, L)
    var = trajectory_table(res.times, res.var_state, res.var_power, res.var_storage, L)
    outputs = [write_csv(out_dir / "ensemble_mean.csv", mean, cols), write_csv(out_dir / "ensemble_var.csv", var, cols)]
    summary = convergence_summary(res, scenario)
    summary.update(n_paths=res.n_paths, guard_events=res.guard_events)
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=2) + "\n")
    outputs.append(path)
    if gnuplot:
        outputs.append(_emit_gnuplot(out_dir, "ensemble_mean.csv", L.n, cfg.name))
    click.echo(
        f"{res.n_paths} paths: max|omega(T)| = {summary['max_abs_omega']:.3e}, "
        f"max relative dispatch error = {summary['max_rel_power_error']:.3e}",
        err=True,
    )
    return outputs


def run_audit(cfg: ScenarioConfig) -> AuditReport:
    """Steady state, assumption gates, equilibrium certificate, then passivity along simulated paths."""
    plant = cfg.plant
    report = AuditReport()
    scenario = cfg.scenario()

    a2 = [check_assumption2(loop.steady, plant.topology, plant.grid.chi_d) for loop in scenario.loops]
    worst2 = min(m for _, m in a2)
    report.assumption2_min_eig = worst2
    report.add("assumption2", all(ok for ok, _ in a2), worst2, "Schur complement min eigenvalue")

    ok4, margins = check_assumption4(plant.winds, plant.f_r_bar, [d.gamma_bar for d in plant.dfigs])
    report.assumption4_margins = margins.tolist()
    report.add("assumption4", ok4, float(margins.min()) if margins.size else np.inf, "wind drift/noise margin")

    trajs = [simulate_path(scenario, cfg.simulation, i) for i in range(cfg.simulation.n_paths)]
    for k, loop in enumerate(scenario.loops):
        rows = np.concatenate([t.states[t.segment == k] for t in trajs])
        seg = AuditReport()
        passivity_audit(rows, loop, seg)
        for c in seg.checks:
            report.add(f"{c.name}[{k}]" if len(scenario.loops) > 1 else c.name, c.passed, c.margin, c.detail)
        if k == 0 or seg.hessian_min_eig < report.hessian_min_eig:
            report.hessian_min_eig = seg.hessian_min_eig
        report.gradient_norm_at_eq = max(seg.gradient_norm_at_eq, report.gradient_norm_at_eq if k else 0.0)
        report.passivity_violations += seg.passivity_violations
        report.dfig_violations += seg.dfig_violations
        report.worst_passivity_margin = min(seg.worst_passivity_margin, report.worst_passivity_margin if k else np.inf)
        report.worst_dfig_margin = min(seg.worst_dfig_margin, report.worst_dfig_margin if k else np.inf)
    stats = [lyapunov_decrement(trajectory_storage(t, scenario)) for t in trajs]
    report.lyapunov_decrement_stats = {
        "paths": len(stats),
        "largest_increase": max(s["max_increase"] for s in stats),
        "S0": stats[0]["S0"],
    }
    return report


@main.command("audit")
@common_options
def audit(cfg: ScenarioConfig, out_dir: Path, gnuplot: bool):
    """Run every certificate check; exit 4 naming the failed checks."""
    report = run_audit(cfg)
    path = out_dir / "audit.json"
    path.write_text(report.to_json() + "\n")
    click.echo(report.summary())
    if not report.passed:
        raise AuditFailed(report.failed, [path])
    return [path]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
