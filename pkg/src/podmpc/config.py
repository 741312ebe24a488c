"""
Run configuration: one JSON document with a section per pipeline stage.

Every field has a default, so ``{}`` is a valid configuration describing the
layered-shear benchmark. Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .field import Grid3
from .observer import EkfConfig
from .sim import PlannerSettings, Scenario, SyntheticWind, WindLayer, default_sensor_network

__all__ = [
    "WindSection",
    "GridSection",
    "SnapshotSection",
    "PodSection",
    "RomSection",
    "EkfSection",
    "PlannerSection",
    "ScenarioSection",
    "RunConfig",
    "load_config",
    "config_from_dict",
]


def _benchmark_layers():
    return [
        dict(z_center=18.0, z_width=2.5, vx=8.0, vy=3.0, period=60.0, phase=0.3),
        dict(z_center=22.5, z_width=2.5, vx=-8.0, vy=3.0, period=84.0, phase=-0.4),
        dict(z_center=27.0, z_width=2.5, vx=1.0, vy=-8.0, period=108.0, phase=0.2),
    ]


@dataclass
class WindSection:
    """Synthetic truth: a list of layers (keys as :class:`~podmpc.sim.WindLayer`, period in hours)."""

    layers: list = field(default_factory=_benchmark_layers)


@dataclass
class GridSection:
    """Snapshot grid and wind domain, in km."""

    lower: list = field(default_factory=lambda: [0.0, 0.0, 15.0])
    upper: list = field(default_factory=lambda: [146.0, 220.0, 30.0])
    dims: list = field(default_factory=lambda: [9, 12, 31])


@dataclass
class SnapshotSection:
    """``count`` snapshots every ``interval_hours`` starting at ``start_hour``."""

    count: int = 240
    interval_hours: float = 1.0
    start_hour: float = 0.0


@dataclass
class PodSection:
    energy_fraction: float = 0.99
    max_modes: int = 20


@dataclass
class RomSection:
    """``nu`` is in m^2/s; ``length_unit`` converts grid units to metres."""

    nu: float = 1e-4
    dt_max: float = 60.0
    length_unit: float = 1000.0


@dataclass
class EkfSection:
    """Scalar noise levels expanded to ``q I`` and ``r I``; ``dt`` must match the sampling period."""

    q: float = 100.0
    r: float = 0.01
    dt: float = 600.0


@dataclass
class PlannerSection:
    horizon_hours: float = 3.0
    dt_seconds: float = 600.0
    w_p: float = 1.0
    w_u: float = 100.0
    w_f: float = 1.0
    u_max: float = 1.0
    bounds: list | None = None
    x_ref: list | None = None
    distance_mode: str = "horizontal"
    max_iter: int = 200


@dataclass
class ScenarioSection:
    agent_start: list = field(default_factory=lambda: [20.0, 110.0, 20.0])
    station_center: list = field(default_factory=lambda: [73.0, 110.0])
    station_radius: float = 50.0
    episode_hours: float = 24.0
    sample_minutes: float = 10.0
    noise_std: float = 0.1
    start_hour: float = 0.0
    sensor_count: int = 7


@dataclass
class RunConfig:
    wind: WindSection = field(default_factory=WindSection)
    grid: GridSection = field(default_factory=GridSection)
    snapshots: SnapshotSection = field(default_factory=SnapshotSection)
    pod: PodSection = field(default_factory=PodSection)
    rom: RomSection = field(default_factory=RomSection)
    ekf: EkfSection = field(default_factory=EkfSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    output_dir: str = "run"
    seed: int = 42

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # builders for the library objects

    def build_grid(self) -> Grid3:
        return Grid3.from_bounds(self.grid.lower, self.grid.upper, self.grid.dims)

    def build_wind(self) -> SyntheticWind:
        return SyntheticWind(tuple(WindLayer(**ly) for ly in self.wind.layers), self.build_grid())

    def snapshot_times(self) -> np.ndarray:
        s = self.snapshots
        return s.start_hour + s.interval_hours * np.arange(s.count)

    def build_scenario(self) -> Scenario:
        grid = self.build_grid()
        sc = self.scenario
        bounds = None
        if self.planner.bounds is not None:
            bounds = tuple(np.asarray(b, dtype=float) for b in self.planner.bounds)
        return Scenario(self.build_wind(), default_sensor_network(grid, sc.sensor_count),
                        np.asarray(sc.agent_start, dtype=float), tuple(sc.station_center), sc.station_radius,
                        sc.episode_hours, sc.sample_minutes, sc.noise_std, self.seed, bounds, sc.start_hour)

    def planner_settings(self, horizon_hours: float | None = None) -> PlannerSettings:
        p = self.planner
        z_ref = None if p.x_ref is None else float(p.x_ref[2])
        return PlannerSettings(p.horizon_hours if horizon_hours is None else float(horizon_hours),
                               p.w_p, p.w_u, p.w_f, p.u_max, p.distance_mode, p.max_iter, z_ref)

    def ekf_config(self, n: int, p: int) -> EkfConfig:
        return EkfConfig.diagonal(n, p, self.ekf.q, self.ekf.r, self.ekf.dt, self.rom.dt_max)


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig`; missing entries take their defaults."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    kwargs = {}
    defaults = RunConfig()
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key '{key}'")
        current = getattr(defaults, key)
        kwargs[key] = _section(type(current), value, key) if is_dataclass(current) else value
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    def need(ok, msg):
        if not ok:
            raise ConfigError(msg)

    need(isinstance(cfg.seed, int) and not isinstance(cfg.seed, bool), "seed must be an integer")
    need(isinstance(cfg.output_dir, str) and cfg.output_dir != "", "output_dir must be a non-empty string")
    for name, v in (("grid.lower", cfg.grid.lower), ("grid.upper", cfg.grid.upper), ("grid.dims", cfg.grid.dims)):
        need(isinstance(v, list) and len(v) == 3, f"{name} needs 3 entries")
    need(all(isinstance(d, int) and d >= 3 for d in cfg.grid.dims), "grid.dims entries must be integers >= 3")
    need(all(u > lo for lo, u in zip(cfg.grid.lower, cfg.grid.upper)), "grid.upper must exceed grid.lower")
    need(isinstance(cfg.wind.layers, list) and len(cfg.wind.layers) > 0, "wind.layers must be a non-empty list")
    layer_keys = {f.name for f in fields(WindLayer)}
    for i, ly in enumerate(cfg.wind.layers):
        need(isinstance(ly, dict), f"wind.layers[{i}] must be an object")
        for key in ly:
            need(key in layer_keys, f"unknown key 'wind.layers[{i}].{key}'")
    need(cfg.snapshots.count >= 1 and cfg.snapshots.interval_hours > 0, "snapshots need count >= 1 and interval > 0")
    need(0 < cfg.pod.energy_fraction <= 1, "pod.energy_fraction must lie in (0, 1]")
    need(cfg.pod.max_modes >= 1, "pod.max_modes must be >= 1")
    need(cfg.rom.nu >= 0 and cfg.rom.dt_max > 0 and cfg.rom.length_unit > 0, "rom values must be positive")
    need(cfg.ekf.q >= 0 and cfg.ekf.r > 0, "ekf.q must be >= 0 and ekf.r > 0")
    dt = cfg.scenario.sample_minutes * 60.0
    need(abs(cfg.ekf.dt - dt) <= 1e-9 * dt, f"ekf.dt ({cfg.ekf.dt} s) must equal the sampling period ({dt} s)")
    need(abs(cfg.planner.dt_seconds - dt) <= 1e-9 * dt,
         f"planner.dt_seconds ({cfg.planner.dt_seconds} s) must equal the sampling period ({dt} s)")
    need(cfg.planner.horizon_hours > 0, "planner.horizon_hours must be positive")
    need(cfg.planner.distance_mode in ("horizontal", "3d"), "planner.distance_mode must be 'horizontal' or '3d'")
    need(min(cfg.planner.w_p, cfg.planner.w_u, cfg.planner.w_f) >= 0, "planner weights must be non-negative")
    need(cfg.planner.u_max > 0, "planner.u_max must be positive")
    if cfg.planner.bounds is not None:
        need(len(cfg.planner.bounds) == 2 and all(len(b) == 3 for b in cfg.planner.bounds),
             "planner.bounds must be [[x, y, z], [x, y, z]]")
    if cfg.planner.x_ref is not None:
        need(len(cfg.planner.x_ref) == 3, "planner.x_ref needs 3 entries")
        need(list(cfg.planner.x_ref[:2]) == list(cfg.scenario.station_center[:2]),
             "planner.x_ref must share its horizontal position with scenario.station_center")
    need(len(cfg.scenario.agent_start) == 3, "scenario.agent_start needs 3 entries")
    need(len(cfg.scenario.station_center) == 2, "scenario.station_center needs 2 entries")
    need(cfg.scenario.station_radius > 0, "scenario.station_radius must be positive")
    need(cfg.scenario.episode_hours >= 0 and cfg.scenario.sample_minutes > 0, "invalid episode timing")
    need(cfg.scenario.noise_std >= 0, "scenario.noise_std must be >= 0")
    need(cfg.scenario.sensor_count >= 1, "scenario.sensor_count must be >= 1")


def load_config(path) -> RunConfig:
    """Read a JSON configuration file; syntax errors report line and column."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)
