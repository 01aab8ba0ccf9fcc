import numpy as np
import pytest

import vortrace as vt
from vortrace import signals

# Reference four-vortex benchmark used throughout the suite.
BENCH_CIRCULATIONS = np.array([1.0, 2.0, 3.0, 4.0])
BENCH_POSITIONS = np.array([[2.0, 0.0], [-1.0, -1.0], [0.5, 0.5], [-2.0, 3.0]])

_CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    _CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


def bench_system() -> vt.VortexSystem:
    return vt.VortexSystem(BENCH_CIRCULATIONS.copy(), BENCH_POSITIONS.copy())


def place_tracers(seed: int, n: int = 20) -> np.ndarray:
    """Uniform draws over the vortex bounding box, away from the vortices."""
    rng = np.random.default_rng(seed)
    lo = BENCH_POSITIONS.min(axis=0)
    hi = BENCH_POSITIONS.max(axis=0)
    out = []
    while len(out) < n:
        cand = rng.uniform(lo, hi)
        if np.hypot(*(cand - BENCH_POSITIONS).T).min() > vt.COLLISION_TOLERANCE:
            out.append(cand)
    return np.array(out)


@pytest.fixture(scope="session")
def medium_record():
    """Benchmark system with 20 tracers over 80 time units."""
    grid = vt.TimeGrid(0.0, 0.01, 8001)
    tracers = vt.TracerSet(place_tracers(29))
    return vt.integrate(bench_system(), tracers, grid)


@pytest.fixture(scope="session")
def medium_raw(medium_record):
    return signals.TrajectoryEnsemble(
        medium_record.grid, medium_record.tracer_history, "raw"
    )


@pytest.fixture(scope="session")
def medium_noisy(medium_raw):
    return signals.add_noise(medium_raw, 0.01, seed=404)


@pytest.fixture(scope="session")
def medium_smoothed(medium_noisy):
    return signals.gaussian_smooth(medium_noisy, 10.0)
