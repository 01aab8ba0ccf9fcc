"""Point-vortex and passive-tracer dynamics on the 2D plane.

State is kept as (n, 2) float arrays of x/y coordinates; the complex
formulation of the equations of motion is realized over coordinate pairs.
Integration uses a fixed-step Fehlberg 4(5) scheme propagating the
fifth-order solution; the embedded error estimate is recorded per step but
never used to adapt the step size, so sample alignment is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import NonFiniteState, SingularConfiguration

#: Bodies closer than this raise SingularConfiguration instead of producing
#: enormous velocities.
COLLISION_TOLERANCE = 1.0e-6

#: Default integration step, matching the sampling cadence of the experiments.
DEFAULT_STEP = 1.0e-2


def _as_points(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid t_k = t0 + h*k for k = 0..nt-1."""

    t0: float
    h: float
    nt: int

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.h)) or self.h <= 0:
            raise ValueError("grid spacing h must be positive and finite")
        if int(self.nt) != self.nt or self.nt < 1:
            raise ValueError("nt must be a positive integer")
        object.__setattr__(self, "nt", int(self.nt))

    @property
    def t_final(self) -> float:
        return self.t0 + self.h * (self.nt - 1)

    @property
    def duration(self) -> float:
        return self.h * (self.nt - 1)

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.nt)


@dataclass(frozen=True)
class VortexSystem:
    """Circulations and current positions of the point vortices."""

    circulations: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        gam = np.asarray(self.circulations, dtype=np.float64).reshape(-1)
        pos = _as_points(self.positions, "positions")
        if gam.size < 1:
            raise ValueError("at least one vortex required")
        if gam.size != pos.shape[0]:
            raise ValueError("circulations and positions disagree on vortex count")
        if not np.isfinite(gam).all():
            raise ValueError("circulations must be finite")
        object.__setattr__(self, "circulations", np.ascontiguousarray(gam))
        object.__setattr__(self, "positions", pos)
        _check_vortex_separation(pos)

    @property
    def n_vortices(self) -> int:
        return self.circulations.size


@dataclass(frozen=True)
class TracerSet:
    """Positions of the passive particles."""

    positions: np.ndarray

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        if pos.shape[0] < 1:
            raise ValueError("at least one tracer required")
        object.__setattr__(self, "positions", pos)

    @property
    def n_tracers(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SimulationRecord:
    """Joint vortex/tracer history sampled on a grid."""

    grid: TimeGrid
    vortex_history: np.ndarray  # (nt, n_vortices, 2)
    tracer_history: np.ndarray  # (nt, n_tracers, 2)
    circulations: np.ndarray
    embedded_error: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.vortex_history.shape[0] != self.grid.nt:
            raise ValueError("vortex history length does not match grid")
        if self.tracer_history.shape[0] != self.grid.nt:
            raise ValueError("tracer history length does not match grid")


class ConservedQuantities(NamedTuple):
    hamiltonian: float
    impulse_x: float
    impulse_y: float
    angular_impulse: float


def _check_vortex_separation(pos: np.ndarray) -> None:
    n = pos.shape[0]
    for i in range(n):
        d = pos[i + 1:] - pos[i]
        if d.size and (np.einsum("ij,ij->i", d, d) <= COLLISION_TOLERANCE**2).any():
            raise SingularConfiguration(
                f"vortices closer than {COLLISION_TOLERANCE} (index {i})"
            )


def _check_tracer_separation(vs: VortexSystem, ts: TracerSet) -> None:
    d = ts.positions[:, None, :] - vs.positions[None, :, :]
    r2 = np.einsum("pvi,pvi->pv", d, d)
    if (r2 <= COLLISION_TOLERANCE**2).any():
        p, v = np.unravel_index(int(np.argmin(r2)), r2.shape)
        raise SingularConfiguration(
            f"tracer {p} within collision tolerance of vortex {v}"
        )


def vortex_velocities(vs: VortexSystem) -> np.ndarray:
    """Velocities induced on each vortex by all others, shape (n_vortices, 2).

    A lone vortex is stationary; mutual interactions follow the conjugated
    sum of circulation-weighted inverse separations.
    """
    _check_vortex_separation(vs.positions)
    out_v = np.zeros_like(vs.positions)
    out_t = np.zeros((0, 2))
    _kernels.fill_velocities(vs.positions, vs.circulations, out_t, out_v, out_t)
    return out_v


def tracer_velocities(vs: VortexSystem, ts: TracerSet) -> np.ndarray:
    """Advection velocities of the tracers, shape (n_tracers, 2)."""
    _check_tracer_separation(vs, ts)
    out_v = np.zeros_like(vs.positions)
    out_t = np.zeros_like(ts.positions)
    _kernels.fill_velocities(vs.positions, vs.circulations, ts.positions, out_v, out_t)
    return out_t


def conserved_quantities(vs: VortexSystem) -> ConservedQuantities:
    """First integrals of the vortex motion: H, Qx, Qy and angular impulse.

    H = -(1/4pi) * sum_{v != s} G_v G_s ln|z_v - z_s|, Qx = sum G_v x_v,
    Qy = sum G_v y_v, I = sum G_v |z_v|^2. Used as integrator diagnostics.
    """
    _check_vortex_separation(vs.positions)
    gam = vs.circulations
    pos = vs.positions
    h_sum = 0.0
    n = gam.size
    for i in range(n):
        for j in range(i + 1, n):
            r = np.hypot(pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1])
            h_sum += gam[i] * gam[j] * math.log(r)
    hamiltonian = -h_sum / (2.0 * math.pi)
    qx = float(np.dot(gam, pos[:, 0]))
    qy = float(np.dot(gam, pos[:, 1]))
    angular = float(np.dot(gam, np.einsum("ij,ij->i", pos, pos)))
    return ConservedQuantities(hamiltonian, qx, qy, angular)


def integrate(
    vs: VortexSystem,
    ts: TracerSet | None,
    grid: TimeGrid,
) -> SimulationRecord:
    """Advance the coupled system across the grid, one fixed step per sample.

    Vortex motion is independent of the tracers (one-way coupling); passing
    ``ts=None`` integrates the vortex subsystem alone and leaves the tracer
    history empty.
    """
    t0pos = ts.positions if ts is not None else np.zeros((0, 2))
    if ts is not None:
        _check_tracer_separation(vs, ts)
    vhist, thist, errlog, status, fail = _kernels.integrate_record(
        vs.positions, vs.circulations, t0pos, grid.nt - 1, grid.h, COLLISION_TOLERANCE
    )
    if status == _kernels.SINGULAR:
        t_fail = grid.t0 + grid.h * fail
        raise SingularConfiguration(f"bodies within collision tolerance at t={t_fail!r}")
    if status == _kernels.NONFINITE:
        t_fail = grid.t0 + grid.h * fail
        raise NonFiniteState(f"non-finite coordinate at t={t_fail!r}")
    return SimulationRecord(grid, vhist, thist, vs.circulations.copy(), errlog)


def lyapunov_max(
    vs: VortexSystem,
    horizon: float,
    renorm_interval: float = 1.0,
    *,
    delta0: float = 1.0e-8,
    h: float = DEFAULT_STEP,
) -> float:
    """Largest Lyapunov exponent of the vortex subsystem.

    Two-trajectory estimate: a copy offset by ``delta0`` is advected
    alongside the reference, rescaled back to ``delta0`` every
    ``renorm_interval`` time units, and the exponent is the mean logarithmic
    growth per interval.
    """
    if renorm_interval <= 0 or horizon <= renorm_interval:
        raise ValueError("need horizon >> renorm_interval > 0")
    if delta0 <= 0:
        raise ValueError("delta0 must be positive")
    steps = max(1, round(renorm_interval / h))
    n_intervals = int(horizon / (steps * h))
    logs, status, fail = _kernels.benettin_log_growth(
        vs.positions, vs.circulations, delta0, h, steps, n_intervals, COLLISION_TOLERANCE
    )
    if status == _kernels.SINGULAR:
        raise SingularConfiguration(
            f"vortices within collision tolerance in renormalization interval {fail}"
        )
    if status == _kernels.NONFINITE:
        raise NonFiniteState(f"non-finite state in renormalization interval {fail}")
    return float(np.mean(logs) / (steps * h))
