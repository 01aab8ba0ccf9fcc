"""Toolkit for recovering point-vortex systems from passive-tracer tracks.

Forward direction: simulate vortices advecting tracers and corrupt the
sampled tracks with Gaussian noise. Inverse direction: estimate the vortex
circulations from per-snapshot velocity-field fits, then reconstruct the
vortex trajectories by shooting over decorrelation-time partitions.
"""

from .dynamics import (
    COLLISION_TOLERANCE,
    ConservedQuantities,
    SimulationRecord,
    TimeGrid,
    TracerSet,
    VortexSystem,
    conserved_quantities,
    integrate,
    lyapunov_max,
    tracer_velocities,
    vortex_velocities,
)
from .errors import (
    ConfigError,
    DegenerateSignal,
    DidNotConverge,
    GridTooShort,
    IntervalTooShort,
    NoDecorrelation,
    NonFiniteState,
    SchemaError,
    ShapeMismatch,
    SingularConfiguration,
    VortraceError,
)

__version__ = "0.1.0"

__all__ = [
    "COLLISION_TOLERANCE",
    "ConservedQuantities",
    "SimulationRecord",
    "TimeGrid",
    "TracerSet",
    "VortexSystem",
    "conserved_quantities",
    "integrate",
    "lyapunov_max",
    "tracer_velocities",
    "vortex_velocities",
    "VortraceError",
    "SingularConfiguration",
    "NonFiniteState",
    "GridTooShort",
    "DegenerateSignal",
    "NoDecorrelation",
    "IntervalTooShort",
    "DidNotConverge",
    "ShapeMismatch",
    "SchemaError",
    "ConfigError",
    "__version__",
]
