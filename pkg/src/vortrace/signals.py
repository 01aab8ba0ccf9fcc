"""Measurement-side processing of sampled tracer trajectories.

Covers the path from clean samples to solver-ready data: Gaussian
measurement noise, Gaussian kernel smoothing, fourth-order finite-difference
velocity estimation, and the complex autocorrelation machinery that yields
the decorrelation time used to partition the reconstruction horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .dynamics import TimeGrid
from .errors import DegenerateSignal, GridTooShort, NoDecorrelation

#: Tags tracking what a trajectory ensemble has been through.
PROVENANCE_TAGS = ("raw", "noisy", "smoothed")

#: Variances below this make the normalized autocorrelation meaningless.
DEGENERATE_VARIANCE = 1.0e-15

#: Default smoothing kernel width, in samples.
DEFAULT_KERNEL_SIGMA = 5.0


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Tracer positions sampled on a grid, shape (nt, n_tracers, 2)."""

    grid: TimeGrid
    positions: np.ndarray
    provenance: str = "raw"

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise ValueError("positions must have shape (nt, n_tracers, 2)")
        if pos.shape[0] != self.grid.nt:
            raise ValueError("positions length does not match grid")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"provenance must be one of {PROVENANCE_TAGS}")
        object.__setattr__(self, "positions", pos)

    @property
    def n_tracers(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class VelocityEnsemble:
    """Estimated tracer velocities on the same grid, shape (nt, n_tracers, 2)."""

    grid: TimeGrid
    velocities: np.ndarray

    def __post_init__(self):
        vel = np.ascontiguousarray(np.asarray(self.velocities, dtype=np.float64))
        if vel.ndim != 3 or vel.shape[2] != 2:
            raise ValueError("velocities must have shape (nt, n_tracers, 2)")
        if vel.shape[0] != self.grid.nt:
            raise ValueError("velocities length does not match grid")
        if not np.isfinite(vel).all():
            raise ValueError("velocities contain non-finite values")
        object.__setattr__(self, "velocities", vel)


@dataclass(frozen=True)
class AutocorrelationCurve:
    """Magnitudes of the normalized complex autocorrelation per lag."""

    lags: np.ndarray  # sample lags, 0..max_lag
    values: np.ndarray  # |rho(lag)|, values[0] == 1 for non-degenerate input


def add_noise(ens: TrajectoryEnsemble, sigma: float, seed: int) -> TrajectoryEnsemble:
    """Corrupt every coordinate with independent N(0, sigma^2) draws.

    Deterministic for a given seed. sigma=0 returns the input values
    unchanged (retagged as noisy).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if ens.provenance != "raw":
        raise ValueError("noise is added to raw trajectories")
    rng = np.random.default_rng(seed)
    noisy = ens.positions + rng.normal(0.0, sigma, size=ens.positions.shape)
    return TrajectoryEnsemble(ens.grid, noisy, "noisy")


def gaussian_smooth(
    ens: TrajectoryEnsemble, kernel_sigma: float = DEFAULT_KERNEL_SIGMA
) -> TrajectoryEnsemble:
    """Per-coordinate convolution with a truncated normalized Gaussian.

    kernel_sigma is in samples; the kernel is truncated at radius
    ceil(4*kernel_sigma) and renormalized over in-range samples at the
    edges, so constants pass through exactly.
    """
    if kernel_sigma <= 0:
        raise ValueError("kernel_sigma must be positive")
    if ens.provenance == "smoothed":
        raise ValueError("input already smoothed")
    radius = int(np.ceil(4.0 * kernel_sigma))
    if ens.grid.nt < radius:
        raise GridTooShort(f"need at least {radius} samples, have {ens.grid.nt}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / kernel_sigma) ** 2)
    kernel /= kernel.sum()

    nt = ens.grid.nt
    flat = ens.positions.reshape(nt, -1)
    num = convolve1d(flat, kernel, axis=0, mode="constant", cval=0.0)
    den = convolve1d(np.ones(nt), kernel, mode="constant", cval=0.0)
    smoothed = (num / den[:, None]).reshape(ens.positions.shape)
    return TrajectoryEnsemble(ens.grid, smoothed, "smoothed")


# Fourth-order first-derivative stencils: interior 5-point central plus
# one-sided rows for the first and last two samples.
_FD_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_FD_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def fd_velocity(ens: TrajectoryEnsemble) -> VelocityEnsemble:
    """Estimate velocities from positions with fourth-order stencils."""
    nt = ens.grid.nt
    if nt < 5:
        raise GridTooShort("fourth-order stencils need at least 5 samples")
    pos = ens.positions
    h = ens.grid.h
    vel = np.empty_like(pos)
    vel[2:-2] = (
        pos[:-4] * _FD_CENTRAL[0]
        + pos[1:-3] * _FD_CENTRAL[1]
        + pos[3:-1] * _FD_CENTRAL[3]
        + pos[4:] * _FD_CENTRAL[4]
    ) / h
    head = np.tensordot(np.vstack([_FD_EDGE0, _FD_EDGE1]), pos[:5], axes=(1, 0))
    vel[0] = head[0] / h
    vel[1] = head[1] / h
    tail = np.tensordot(np.vstack([_FD_EDGE1, _FD_EDGE0]), pos[-5:][::-1], axes=(1, 0))
    vel[-2] = -tail[0] / h
    vel[-1] = -tail[1] / h
    return VelocityEnsemble(ens.grid, vel)


def _complex_series(ens: TrajectoryEnsemble, tracer: int) -> np.ndarray:
    if not 0 <= tracer < ens.n_tracers:
        raise ValueError(f"tracer index {tracer} out of range")
    return ens.positions[:, tracer, 0] + 1j * ens.positions[:, tracer, 1]


def autocorrelation(
    ens: TrajectoryEnsemble, tracer: int, max_lag: int
) -> AutocorrelationCurve:
    """|rho(lag)| of one tracer path viewed as a complex series.

    Mean-subtracted, biased (1/nt) estimator normalized by the sample
    variance, so the magnitude is bounded by 1 and decays at long lags.
    """
    nt = ens.grid.nt
    if not 0 <= max_lag < nt:
        raise ValueError("need 0 <= max_lag < nt")
    z = _complex_series(ens, tracer)
    z = z - z.mean()
    var = float(np.mean(np.abs(z) ** 2))
    if var < DEGENERATE_VARIANCE:
        raise DegenerateSignal(f"tracer {tracer} variance {var} below threshold")
    # FFT correlation: c[l] = sum_k z[k] * conj(z[k+l]) for l = 0..max_lag
    nfft = int(2 ** np.ceil(np.log2(2 * nt)))
    fz = np.fft.fft(z, nfft)
    corr = np.fft.ifft(np.abs(fz) ** 2)[: max_lag + 1]
    values = np.abs(corr) / (nt * var)
    values[0] = 1.0
    return AutocorrelationCurve(np.arange(max_lag + 1), values)


def decorrelation_time(
    ens: TrajectoryEnsemble, alpha: float, max_lag: int
) -> float:
    """Time after which every tracer's |rho| stays at or below alpha.

    Per tracer, tau_p is h times the smallest lag L with |rho(l)| <= alpha
    for every l in [L, max_lag]; the result is the minimum over tracers.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    taus = np.empty(ens.n_tracers)
    for p in range(ens.n_tracers):
        curve = autocorrelation(ens, p, max_lag)
        above = np.nonzero(curve.values[1:] > alpha)[0]
        last_above = int(above[-1]) + 1 if above.size else 0
        if last_above >= max_lag:
            raise NoDecorrelation(
                f"tracer {p} still above alpha={alpha} at lag {max_lag}"
            )
        taus[p] = ens.grid.h * (last_above + 1)
    return float(taus.min())
