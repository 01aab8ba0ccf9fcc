"""Circulation estimation from snapshot inversions of the tracer velocity field.

At each sample time the tracer positions and velocities overdetermine the
3*n_vortices unknowns (circulations plus vortex positions), provided
2*n_tracers >= 3*n_vortices. Snapshots are solved in sequence: each solution
is advanced one grid step under the vortex dynamics to seed the next
position guess, while the circulation guess is refreshed with a random
multiplicative perturbation to explore the parameter space. Outlier-filtered
aggregation over all snapshots then yields the final estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import TimeGrid
from .errors import DidNotConverge
from .signals import TrajectoryEnsemble, VelocityEnsemble

#: Candidate vortex-tracer distances are clamped here during solves.
RESIDUAL_CLAMP = 1.0e-6


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the chained snapshot solver."""

    epsilon: float = 0.1
    max_iterations: int = 60
    residual_tol: float = 1.0e-10
    step_tol: float = 1.0e-10
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.residual_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True)
class SnapshotSolution:
    """Result of inverting the velocity field at one sample time."""

    index: int
    circulations: np.ndarray
    positions: np.ndarray
    residual_norm: float
    converged: bool


@dataclass(frozen=True)
class CirculationEstimate:
    """Per-snapshot solutions plus the outlier-filtered aggregate."""

    grid: TimeGrid
    circulations: np.ndarray  # (nt, n_vortices)
    positions: np.ndarray  # (nt, n_vortices, 2)
    residual_norms: np.ndarray  # (nt,)
    converged: np.ndarray  # (nt,) bool
    retained: np.ndarray  # (nt, n_vortices) bool
    estimate: np.ndarray  # (n_vortices,)
    aggregator: str = "median"
    mean_estimate: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def snapshot(self, k: int) -> SnapshotSolution:
        return SnapshotSolution(
            k,
            self.circulations[k].copy(),
            self.positions[k].copy(),
            float(self.residual_norms[k]),
            bool(self.converged[k]),
        )


def _pack(circulations, positions) -> np.ndarray:
    gam = np.asarray(circulations, dtype=np.float64).reshape(-1)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if gam.size != pos.shape[0]:
        raise ValueError("circulations and positions disagree on vortex count")
    theta = np.empty(3 * gam.size)
    theta[: gam.size] = gam
    theta[gam.size:] = pos.reshape(-1)
    return theta


def _unpack(theta: np.ndarray):
    nv = theta.size // 3
    return theta[:nv].copy(), theta[nv:].reshape(nv, 2).copy()


def _conjugate(velocities: np.ndarray) -> np.ndarray:
    w = np.ascontiguousarray(np.asarray(velocities, dtype=np.float64))
    w = w.copy()
    w[..., 1] *= -1.0
    return w


def _check_counts(n_tracers: int, n_vortices: int) -> None:
    if 2 * n_tracers < 3 * n_vortices:
        raise ValueError(
            f"{n_tracers} tracers underdetermine {n_vortices} vortices: "
            f"need 2*n_tracers >= 3*n_vortices"
        )


def snapshot_residual(
    circulations,
    positions,
    tracer_positions,
    tracer_velocities,
) -> np.ndarray:
    """Residuals of the velocity-field fit at one instant, shape (2*n_tracers,).

    Rows come in (re, im) pairs per tracer: conjugated measured velocity
    minus the field induced by the candidate vortices.
    """
    theta = _pack(circulations, positions)
    zp = np.ascontiguousarray(np.asarray(tracer_positions, dtype=np.float64).reshape(-1, 2))
    wconj = _conjugate(np.asarray(tracer_velocities, dtype=np.float64).reshape(-1, 2))
    res = np.zeros(2 * zp.shape[0])
    jac = np.zeros((0, 0))
    _kernels.residual_and_jacobian(theta, zp, wconj, RESIDUAL_CLAMP, res, jac, False)
    return res


def solve_snapshot(
    tracer_positions,
    tracer_velocities,
    guess_circulations,
    guess_positions,
    cfg: SolverConfig = SolverConfig(),
    index: int = 0,
) -> SnapshotSolution:
    """Least-squares fit of circulations and vortex positions to one snapshot.

    Damped Gauss-Newton from the supplied guess; the solution is returned
    even when unconverged (flagged). Vortex labeling follows the guess.
    """
    theta0 = _pack(guess_circulations, guess_positions)
    zp = np.ascontiguousarray(np.asarray(tracer_positions, dtype=np.float64).reshape(-1, 2))
    wconj = _conjugate(np.asarray(tracer_velocities, dtype=np.float64).reshape(-1, 2))
    _check_counts(zp.shape[0], theta0.size // 3)
    theta, resnorm, converged, _clamped, _n = _kernels.lm_solve_snapshot(
        zp, wconj, theta0, cfg.max_iterations, cfg.residual_tol, cfg.step_tol, RESIDUAL_CLAMP
    )
    gam, pos = _unpack(theta)
    return SnapshotSolution(index, gam, pos, float(resnorm), bool(converged))


def tukey_outlier_mask(values: np.ndarray) -> np.ndarray:
    """Per-column Tukey-fence mask: True where a value is retained.

    Fences are [Q1 - 1.5*IQR, Q3 + 1.5*IQR] computed per column.
    """
    vals = np.asarray(values, dtype=np.float64)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    if vals.shape[0] < 4:
        raise ValueError("need at least 4 values per column for quartiles")
    q1 = np.percentile(vals, 25.0, axis=0)
    q3 = np.percentile(vals, 75.0, axis=0)
    iqr = q3 - q1
    lo = q1 - 1.5 * iqr
    hi = q3 + 1.5 * iqr
    mask = (vals >= lo) & (vals <= hi)
    return mask[:, 0] if squeeze else mask


def estimate_circulations(
    ens: TrajectoryEnsemble,
    vel: VelocityEnsemble,
    guess_circulations,
    guess_positions,
    cfg: SolverConfig = SolverConfig(),
    aggregator: str = "median",
    passes: int = 1,
) -> CirculationEstimate:
    """Chain snapshot solves over the whole grid and aggregate robustly.

    Each snapshot seeds the next one (positions advanced one grid step,
    circulations perturbed by uniform factors in [-epsilon, epsilon]).
    Unconverged snapshots are excluded from the aggregate; the run fails
    only if more than half of them fail. With ``passes > 1`` the whole chain
    is re-run using the previous pass's aggregate as the initial guess.
    """
    if aggregator not in ("median", "mean"):
        raise ValueError("aggregator must be 'median' or 'mean'")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if ens.positions.shape[:2] != vel.velocities.shape[:2]:
        raise ValueError("trajectory and velocity ensembles disagree on shape")

    gam_guess = np.asarray(guess_circulations, dtype=np.float64).reshape(-1)
    pos_guess = np.asarray(guess_positions, dtype=np.float64).reshape(-1, 2)
    _check_counts(ens.n_tracers, gam_guess.size)

    nt = ens.grid.nt
    nv = gam_guess.size
    wconj_series = _conjugate(vel.velocities)

    rng = np.random.default_rng(cfg.seed)
    result = None
    for _ in range(passes):
        deltas = rng.uniform(-cfg.epsilon, cfg.epsilon, size=(nt, nv))
        gam_all, pos_all, resn, conv = _kernels.chained_snapshot_solve(
            ens.positions,
            wconj_series,
            gam_guess,
            pos_guess,
            deltas,
            ens.grid.h,
            cfg.max_iterations,
            cfg.residual_tol,
            cfg.step_tol,
            RESIDUAL_CLAMP,
        )
        converged = conv.astype(bool)
        n_ok = int(converged.sum())
        if n_ok < nt - n_ok:
            raise DidNotConverge(
                f"{nt - n_ok} of {nt} snapshots failed to converge"
            )
        retained = np.zeros((nt, nv), dtype=bool)
        ok_vals = gam_all[converged]
        retained[converged] = tukey_outlier_mask(ok_vals)
        estimate = np.empty(nv)
        mean_estimate = np.empty(nv)
        for v in range(nv):
            kept = gam_all[retained[:, v], v]
            estimate[v] = np.median(kept) if aggregator == "median" else kept.mean()
            mean_estimate[v] = kept.mean()
        result = CirculationEstimate(
            ens.grid, gam_all, pos_all, resn, converged, retained,
            estimate, aggregator, mean_estimate,
        )
        # next pass restarts from the aggregate at the first solved positions
        gam_guess = estimate.copy()
        pos_guess = pos_all[0].copy()
    return result
