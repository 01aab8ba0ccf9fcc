"""Command-line pipeline tying the computational stages into experiments.

Each subcommand is a thin wrapper over one library stage and communicates
with the others through trajectory/velocity files and JSON reports, so a
full experiment is a sequence of shell commands driven by one config file.
Failures exit nonzero with a machine-readable error category on stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import dynamics, signals
from . import circulation as circmod
from . import reconstruction as recmod
from .config import ExperimentConfig, load_config
from .errors import VortraceError
from .trajio import (
    read_metrics,
    read_trajectory_file,
    write_metrics,
    write_trajectory_file,
)

VORTEX_FILE = "vortices.csv"
TRACER_FILE = "tracers.csv"
NOISY_FILE = "tracers_noisy.csv"
SMOOTHED_FILE = "tracers_smoothed.csv"
VELOCITY_FILE = "velocities.csv"
CIRCULATION_REPORT = "circulations.json"
SNAPSHOT_FILE = "circulation_snapshots.csv"
RECONSTRUCTION_REPORT = "reconstruction.json"
RECOVERED_FILE = "recovered_vortices.csv"
ERROR_SERIES_FILE = "error_series.csv"
METRICS_FILE = "metrics.json"


def _fail(exc: VortraceError) -> None:
    payload = {"error": {"category": exc.category, "message": str(exc)}}
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VortraceError as exc:
            _fail(exc)

    return wrapper


def _out_dir(cfg: ExperimentConfig | None, out: str | None) -> Path:
    if out is not None:
        path = Path(out)
    elif cfg is not None and cfg.output_dir:
        path = Path(cfg.output_dir)
    else:
        path = Path.cwd()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_ensemble(path: str) -> signals.TrajectoryEnsemble:
    data = read_trajectory_file(path)
    return signals.TrajectoryEnsemble(data.grid, data.values, data.provenance)


config_option = click.option(
    "--config", "config_path", required=True, type=click.Path(exists=True),
    help="Experiment configuration (YAML).",
)
out_option = click.option(
    "--out", "out", default=None, type=click.Path(), help="Output directory."
)


@click.group()
@click.version_option()
def main():
    """Simulate point-vortex systems and recover them from tracer tracks."""


@main.command()
@config_option
@out_option
@click.option("--seed", type=int, default=None, help="Override the placement seed.")
@_guarded
def simulate(config_path, out, seed):
    """Integrate the configured system; write truth and raw tracer files."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    placement_seed = cfg.placement_seed if seed is None else seed
    tracers = cfg.place_tracers(placement_seed)
    record = dynamics.integrate(cfg.vortex_system, tracers, cfg.grid)
    seeds = {"placement": placement_seed}
    vfile = write_trajectory_file(
        out_path / VORTEX_FILE, cfg.grid, record.vortex_history, "vortex",
        "raw", seeds, circulations=record.circulations,
    )
    tfile = write_trajectory_file(
        out_path / TRACER_FILE, cfg.grid, record.tracer_history, "tracer",
        "raw", seeds,
    )
    click.echo(f"wrote {vfile}")
    click.echo(f"wrote {tfile}")


@main.command()
@config_option
@click.option("--tracers", "tracer_path", required=True, type=click.Path(exists=True))
@out_option
@click.option("--seed", type=int, default=None, help="Override the noise seed.")
@_guarded
def corrupt(config_path, tracer_path, out, seed):
    """Add Gaussian measurement noise to a raw tracer file."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    data = read_trajectory_file(tracer_path)
    ens = signals.TrajectoryEnsemble(data.grid, data.values, data.provenance)
    noise_seed = cfg.noise_seed if seed is None else seed
    noisy = signals.add_noise(ens, cfg.noise_sigma, noise_seed)
    seeds = dict(data.seeds, noise=noise_seed)
    path = write_trajectory_file(
        out_path / NOISY_FILE, noisy.grid, noisy.positions, data.kind,
        noisy.provenance, seeds,
    )
    click.echo(f"wrote {path}")


@main.command()
@config_option
@click.option("--tracers", "tracer_path", required=True, type=click.Path(exists=True))
@out_option
@_guarded
def smooth(config_path, tracer_path, out):
    """Gaussian-filter a tracer file."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    data = read_trajectory_file(tracer_path)
    ens = signals.TrajectoryEnsemble(data.grid, data.values, data.provenance)
    smoothed = signals.gaussian_smooth(ens, cfg.kernel_sigma)
    path = write_trajectory_file(
        out_path / SMOOTHED_FILE, smoothed.grid, smoothed.positions, data.kind,
        smoothed.provenance, data.seeds,
    )
    click.echo(f"wrote {path}")


@main.command()
@config_option
@click.option("--tracers", "tracer_path", required=True, type=click.Path(exists=True))
@out_option
@_guarded
def velocities(config_path, tracer_path, out):
    """Estimate tracer velocities by fourth-order finite differences."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    data = read_trajectory_file(tracer_path)
    ens = signals.TrajectoryEnsemble(data.grid, data.values, data.provenance)
    vel = signals.fd_velocity(ens)
    path = write_trajectory_file(
        out_path / VELOCITY_FILE, vel.grid, vel.velocities, data.kind,
        data.provenance, data.seeds, velocity=True,
    )
    click.echo(f"wrote {path}")


@main.command()
@config_option
@click.option("--tracers", "tracer_path", required=True, type=click.Path(exists=True))
@click.option("--velocities", "velocity_path", required=True, type=click.Path(exists=True))
@out_option
@click.option("--truth", "truth_path", default=None, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the solver seed.")
@_guarded
def circulations(config_path, tracer_path, velocity_path, out, truth_path, seed):
    """Estimate the circulations by chained snapshot inversion."""
    cfg = load_config(config_path)
    if cfg.guess_circulations is None:
        raise VortraceError("config needs a 'guess' section for circulations")
    out_path = _out_dir(cfg, out)
    ens = _load_ensemble(tracer_path)
    vdata = read_trajectory_file(velocity_path)
    if not vdata.is_velocity:
        raise VortraceError(f"{velocity_path} is not a velocity file")
    vel = signals.VelocityEnsemble(vdata.grid, vdata.values)
    solver = cfg.solver if seed is None else circmod.SolverConfig(
        epsilon=cfg.solver.epsilon,
        max_iterations=cfg.solver.max_iterations,
        residual_tol=cfg.solver.residual_tol,
        step_tol=cfg.solver.step_tol,
        seed=seed,
    )
    est = circmod.estimate_circulations(
        ens, vel, cfg.guess_circulations, cfg.guess_positions,
        solver, aggregator=cfg.aggregator,
    )

    report = {
        "aggregator": est.aggregator,
        "estimate": est.estimate.tolist(),
        "median_estimate": [
            float(np.median(est.circulations[est.retained[:, v], v]))
            for v in range(est.estimate.size)
        ],
        "mean_estimate": est.mean_estimate.tolist(),
        "first_snapshot_positions": est.positions[0].tolist(),
        "converged_fraction": float(est.converged.mean()),
        "retained_fraction": est.retained.mean(axis=0).tolist(),
        "solver_seed": solver.seed,
    }
    truth_data = None
    if truth_path is not None:
        truth_data = read_trajectory_file(truth_path)
        if truth_data.circulations is None:
            raise VortraceError(f"{truth_path} carries no circulations header")
        true_sorted = np.sort(truth_data.circulations)
        est_sorted = np.sort(est.estimate)
        report["true_circulations"] = truth_data.circulations.tolist()
        report["relative_errors"] = (
            np.abs(est_sorted - true_sorted) / np.abs(true_sorted)
        ).tolist()
    path = write_metrics(out_path / CIRCULATION_REPORT, report)
    click.echo(f"wrote {path}")

    snap_path = out_path / SNAPSHOT_FILE
    nv = est.estimate.size
    header = ["index"]
    for v in range(nv):
        header += [f"gamma{v}", f"retained{v}"]
    header += ["residual_norm", "converged"]
    lines = [",".join(header)]
    for k in range(est.grid.nt):
        fields = [str(k)]
        for v in range(nv):
            fields += [repr(float(est.circulations[k, v])), str(int(est.retained[k, v]))]
        fields += [repr(float(est.residual_norms[k])), str(int(est.converged[k]))]
        lines.append(",".join(fields))
    snap_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"wrote {snap_path}")


@main.command()
@config_option
@click.option("--tracers", "tracer_path", required=True, type=click.Path(exists=True))
@click.option(
    "--circulations", "circulation_path", required=True, type=click.Path(exists=True),
    help="JSON report from the circulations stage.",
)
@out_option
@click.option("--truth", "truth_path", default=None, type=click.Path(exists=True))
@_guarded
def reconstruct(config_path, tracer_path, circulation_path, out, truth_path):
    """Recover the vortex trajectories over decorrelation partitions."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    ens = _load_ensemble(tracer_path)
    circ_report = read_metrics(circulation_path)
    gam = np.asarray(circ_report["estimate"], dtype=np.float64)
    guess0 = np.asarray(circ_report["first_snapshot_positions"], dtype=np.float64)
    options = recmod.ShootingOptions(max_iterations=cfg.shooting_max_iterations)
    result = recmod.reconstruct_trajectories(
        ens, gam, cfg.alpha, guess0, max_lag=cfg.max_lag, options=options
    )

    path = write_trajectory_file(
        out_path / RECOVERED_FILE, ens.grid, result.vortex_trajectory, "vortex",
        "raw", {}, circulations=gam,
    )
    click.echo(f"wrote {path}")

    report = {
        "tau": result.plan.tau,
        "alpha": cfg.alpha,
        "n_intervals": result.plan.n_intervals,
        "boundaries": [int(b) for b in result.plan.boundaries],
        "interval_objectives": [iv.objective for iv in result.intervals],
        "interval_converged": [iv.converged for iv in result.intervals],
        "circulations": gam.tolist(),
    }
    if truth_path is not None:
        truth = _truth_record(truth_path, ens.grid)
        errors = recmod.trajectory_errors(result.vortex_trajectory, gam, truth)
        report["total_relative_error"] = errors.total
        _write_error_series(out_path / ERROR_SERIES_FILE, ens.grid, errors,
                            set(int(b) for b in result.plan.boundaries))
        click.echo(f"wrote {out_path / ERROR_SERIES_FILE}")
    rpath = write_metrics(out_path / RECONSTRUCTION_REPORT, report)
    click.echo(f"wrote {rpath}")


def _truth_record(truth_path: str, grid) -> dynamics.SimulationRecord:
    truth = read_trajectory_file(truth_path)
    if truth.circulations is None:
        raise VortraceError(f"{truth_path} carries no circulations header")
    if truth.grid != grid:
        raise VortraceError("truth grid does not match the data grid")
    return dynamics.SimulationRecord(
        truth.grid, truth.values, np.zeros((truth.grid.nt, 0, 2)), truth.circulations
    )


def _write_error_series(path, grid, errors, boundary_set):
    lines = ["time,relative_error,partition_boundary"]
    for k in range(grid.nt):
        t = grid.t0 + grid.h * k
        flag = 1 if k in boundary_set else 0
        lines.append(f"{t!r},{errors.per_step[k]!r},{flag}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@main.command()
@click.option("--recovered", "recovered_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option(
    "--reconstruction", "reconstruction_path", default=None, type=click.Path(exists=True),
    help="Reconstruction report, for partition boundary flags.",
)
@out_option
@_guarded
def evaluate(recovered_path, truth_path, reconstruction_path, out):
    """Compare a recovered vortex file against the ground truth."""
    out_path = _out_dir(None, out)
    recovered = read_trajectory_file(recovered_path)
    if recovered.circulations is None:
        raise VortraceError(f"{recovered_path} carries no circulations header")
    truth = _truth_record(truth_path, recovered.grid)
    errors = recmod.trajectory_errors(
        recovered.values, recovered.circulations, truth
    )
    boundaries: set[int] = set()
    document = {
        "total_relative_error": errors.total,
        "max_step_error": float(errors.per_step.max()),
        "n_samples": recovered.grid.nt,
    }
    if reconstruction_path is not None:
        report = read_metrics(reconstruction_path)
        boundaries = set(int(b) for b in report.get("boundaries", []))
        document["tau"] = report.get("tau")
        document["n_intervals"] = report.get("n_intervals")
        if boundaries:
            b = np.array(sorted(boundaries))
            drops = errors.per_step[b] <= errors.per_step[b - 1]
            document["boundary_drop_fraction"] = float(drops.mean())
    path = write_metrics(out_path / METRICS_FILE, document)
    click.echo(f"wrote {path}")
    _write_error_series(out_path / ERROR_SERIES_FILE, recovered.grid, errors, boundaries)
    click.echo(f"wrote {out_path / ERROR_SERIES_FILE}")


@main.command()
@config_option
@out_option
@click.option("--horizon", type=float, default=None, help="Override the horizon.")
@_guarded
def lyapunov(config_path, out, horizon):
    """Estimate the largest Lyapunov exponent of the configured vortices."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    span = cfg.lyapunov_horizon if horizon is None else horizon
    value = dynamics.lyapunov_max(
        cfg.vortex_system, span, cfg.lyapunov_renorm, h=cfg.h
    )
    path = write_metrics(
        out_path / "lyapunov.json",
        {"lyapunov_max": value, "horizon": span, "renorm_interval": cfg.lyapunov_renorm},
    )
    click.echo(f"wrote {path}")
    click.echo(f"lyapunov_max = {value!r}")


@main.command()
@config_option
@click.option("--tracers", "tracer_path", required=True, type=click.Path(exists=True))
@out_option
@click.option("--max-lag", "max_lag", type=int, default=None)
@_guarded
def autocorr(config_path, tracer_path, out, max_lag):
    """Emit per-tracer autocorrelation curves and decorrelation times."""
    cfg = load_config(config_path)
    out_path = _out_dir(cfg, out)
    ens = _load_ensemble(tracer_path)
    lag = cfg.max_lag if max_lag is None else max_lag
    curves = [signals.autocorrelation(ens, p, lag) for p in range(ens.n_tracers)]
    lines = ["lag,time," + ",".join(f"tracer{p}" for p in range(ens.n_tracers))]
    for i in range(lag + 1):
        vals = ",".join(repr(float(c.values[i])) for c in curves)
        lines.append(f"{i},{ens.grid.h * i!r},{vals}")
    cpath = out_path / "autocorrelation.csv"
    cpath.write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"wrote {cpath}")
    tau = signals.decorrelation_time(ens, cfg.alpha, lag)
    path = write_metrics(
        out_path / "decorrelation.json",
        {"tau": tau, "alpha": cfg.alpha, "max_lag": lag},
    )
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
