"""Experiment configuration: one YAML document drives the whole pipeline.

Every stochastic stage (tracer placement, measurement noise, solver guess
refresh) carries its own seed so a full experiment is reproducible from the
config alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .circulation import SolverConfig
from .dynamics import COLLISION_TOLERANCE, TimeGrid, TracerSet, VortexSystem
from .errors import ConfigError

CONFIG_FORMAT = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated pipeline parameters; see ``from_yaml`` for the layout."""

    vortex_positions: np.ndarray
    vortex_circulations: np.ndarray
    tracer_count: int
    placement_seed: int
    tracer_box: np.ndarray | None  # [[xmin, ymin], [xmax, ymax]]
    t0: float
    h: float
    nt: int
    noise_sigma: float
    noise_seed: int
    kernel_sigma: float
    solver: SolverConfig
    guess_circulations: np.ndarray | None
    guess_positions: np.ndarray | None
    alpha: float
    max_lag: int
    aggregator: str = "median"
    output_dir: str | None = None
    lyapunov_horizon: float = 10000.0
    lyapunov_renorm: float = 1.0
    shooting_max_iterations: int = 200

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.h, self.nt)

    @property
    def vortex_system(self) -> VortexSystem:
        return VortexSystem(self.vortex_circulations, self.vortex_positions)

    def place_tracers(self, seed: int | None = None) -> TracerSet:
        """Seed tracers uniformly over the box, rejecting near-vortex draws.

        The box defaults to the bounding box of the initial vortex positions.
        """
        rng = np.random.default_rng(self.placement_seed if seed is None else seed)
        if self.tracer_box is not None:
            lo, hi = self.tracer_box[0], self.tracer_box[1]
        else:
            lo = self.vortex_positions.min(axis=0)
            hi = self.vortex_positions.max(axis=0)
        out = []
        attempts = 0
        while len(out) < self.tracer_count:
            cand = rng.uniform(lo, hi)
            attempts += 1
            if attempts > 1000 * self.tracer_count:
                raise ConfigError("tracer placement keeps hitting vortices")
            d = np.hypot(*(cand - self.vortex_positions).T)
            if d.min() > COLLISION_TOLERANCE:
                out.append(cand)
        return TracerSet(np.array(out))


def _require(mapping: dict, key: str, section: str):
    if key not in mapping:
        raise ConfigError(f"missing '{key}' in config section '{section}'")
    return mapping[key]


def _points(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or not np.isfinite(arr).all():
        raise ConfigError(f"'{name}' must be a list of finite [x, y] pairs")
    return arr


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    if doc.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
        raise ConfigError(f"unsupported config format {doc.get('format')}")
    try:
        vortices = _require(doc, "vortices", "top level")
        vpos = _points(_require(vortices, "positions", "vortices"), "vortices.positions")
        vgam = np.asarray(_require(vortices, "circulations", "vortices"), dtype=np.float64)
        if vgam.ndim != 1 or vgam.size != vpos.shape[0]:
            raise ConfigError("vortices.circulations must match positions")

        tracers = _require(doc, "tracers", "top level")
        count = int(_require(tracers, "count", "tracers"))
        placement_seed = int(_require(tracers, "seed", "tracers"))
        box = tracers.get("box")
        box_arr = _points(box, "tracers.box") if box is not None else None

        grid = _require(doc, "grid", "top level")
        t0 = float(grid.get("t0", 0.0))
        h = float(_require(grid, "h", "grid"))
        nt = int(_require(grid, "nt", "grid"))

        noise = doc.get("noise", {})
        sigma = float(noise.get("sigma", 0.0))
        noise_seed = int(noise.get("seed", 0))

        smoothing = doc.get("smoothing", {})
        kernel_sigma = float(smoothing.get("kernel_sigma", 5.0))

        solver_doc = doc.get("solver", {})
        solver = SolverConfig(
            epsilon=float(solver_doc.get("epsilon", 0.1)),
            max_iterations=int(solver_doc.get("max_iterations", 60)),
            residual_tol=float(solver_doc.get("residual_tol", 1.0e-10)),
            step_tol=float(solver_doc.get("step_tol", 1.0e-10)),
            seed=int(solver_doc.get("seed", 0)),
        )

        guess = doc.get("guess")
        guess_gam = guess_pos = None
        if guess is not None:
            guess_gam = np.asarray(_require(guess, "circulations", "guess"), dtype=np.float64)
            guess_pos = _points(_require(guess, "positions", "guess"), "guess.positions")
            if guess_gam.size != vgam.size or guess_pos.shape[0] != vgam.size:
                raise ConfigError("guess size must match the vortex count")

        partition = doc.get("partition", {})
        alpha = float(partition.get("alpha", 0.2))
        max_lag = int(partition.get("max_lag", nt - 1))

        lyap = doc.get("lyapunov", {})

        cfg = ExperimentConfig(
            vortex_positions=vpos,
            vortex_circulations=vgam,
            tracer_count=count,
            placement_seed=placement_seed,
            tracer_box=box_arr,
            t0=t0,
            h=h,
            nt=nt,
            noise_sigma=sigma,
            noise_seed=noise_seed,
            kernel_sigma=kernel_sigma,
            solver=solver,
            guess_circulations=guess_gam,
            guess_positions=guess_pos,
            alpha=alpha,
            max_lag=max_lag,
            aggregator=str(doc.get("aggregator", "median")),
            output_dir=doc.get("output_dir"),
            lyapunov_horizon=float(lyap.get("horizon", 10000.0)),
            lyapunov_renorm=float(lyap.get("renorm_interval", 1.0)),
            shooting_max_iterations=int(doc.get("shooting", {}).get("max_iterations", 200)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    # construct eagerly so invariant violations surface as config errors
    try:
        cfg.grid
        cfg.vortex_system
    except Exception as exc:
        raise ConfigError(f"invalid experiment definition: {exc}") from exc
    if not 0.0 < cfg.alpha < 1.0:
        raise ConfigError("partition.alpha must be in (0, 1)")
    if not 0 < cfg.max_lag < cfg.nt:
        raise ConfigError("partition.max_lag must be in (0, nt)")
    if cfg.noise_sigma < 0:
        raise ConfigError("noise.sigma must be nonnegative")
    if cfg.kernel_sigma <= 0:
        raise ConfigError("smoothing.kernel_sigma must be positive")
    if cfg.tracer_count < 1:
        raise ConfigError("tracers.count must be positive")
    if cfg.aggregator not in ("median", "mean"):
        raise ConfigError("aggregator must be 'median' or 'mean'")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a YAML experiment configuration."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Round-trippable plain-dict form of a config."""
    doc = {
        "format": CONFIG_FORMAT,
        "vortices": {
            "positions": cfg.vortex_positions.tolist(),
            "circulations": cfg.vortex_circulations.tolist(),
        },
        "tracers": {"count": cfg.tracer_count, "seed": cfg.placement_seed},
        "grid": {"t0": cfg.t0, "h": cfg.h, "nt": cfg.nt},
        "noise": {"sigma": cfg.noise_sigma, "seed": cfg.noise_seed},
        "smoothing": {"kernel_sigma": cfg.kernel_sigma},
        "solver": {
            "epsilon": cfg.solver.epsilon,
            "max_iterations": cfg.solver.max_iterations,
            "residual_tol": cfg.solver.residual_tol,
            "step_tol": cfg.solver.step_tol,
            "seed": cfg.solver.seed,
        },
        "partition": {"alpha": cfg.alpha, "max_lag": cfg.max_lag},
        "aggregator": cfg.aggregator,
        "lyapunov": {
            "horizon": cfg.lyapunov_horizon,
            "renorm_interval": cfg.lyapunov_renorm,
        },
        "shooting": {"max_iterations": cfg.shooting_max_iterations},
    }
    if cfg.tracer_box is not None:
        doc["tracers"]["box"] = cfg.tracer_box.tolist()
    if cfg.guess_circulations is not None:
        doc["guess"] = {
            "circulations": cfg.guess_circulations.tolist(),
            "positions": cfg.guess_positions.tolist(),
        }
    if cfg.output_dir is not None:
        doc["output_dir"] = cfg.output_dir
    return doc


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
