"""
Synthetic wind world and the closed measurement/estimation/planning loop.

The ground truth is a sum of horizontal wind layers,

    v(x, t) = sum_l exp(-((z - z_l) / w_l)^2) cos(2 pi t / T_l + phi_l) (vx_l, vy_l, 0),

which is divergence free (the horizontal components depend on z only) and has
spatial rank equal to the number of layers, so a POD basis trained on it can
represent it exactly. Snapshot and log times are in hours; the loop itself
works in seconds.

Each closed-loop step is: measure the true wind at the fixed sensors and the
agent, run the EKF, forecast the ROM over the planning horizon, plan, and
advance the agent with the *true* wind.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import OutOfDomainError, StepFailure
from .field import Grid3, VectorField3
from .observer import COMPONENTS, EkfConfig, EkfState, PredictedFlow, SensorNetwork, ekf_predict, \
    ekf_update, forecast_field, measurement_matrix
from .planner import M_PER_KM, PlanProblem, shift_warm_start, solve_mpc
from .pod import PodBasis, SnapshotSet
from .rom import RomModel

__all__ = [
    "WindLayer",
    "SyntheticWind",
    "Scenario",
    "PlannerSettings",
    "EpisodeLog",
    "wind_eval",
    "wind_eval_many",
    "snapshot_campaign",
    "agent_step",
    "run_episode",
    "default_sensor_network",
    "layered_shear_benchmark",
]

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class WindLayer:
    """One horizontally uniform jet. ``period`` (hours) may be ``inf`` for a steady layer."""

    z_center: float
    z_width: float
    vx: float
    vy: float
    period: float = math.inf
    phase: float = 0.0

    def __post_init__(self):
        if not self.z_width > 0:
            raise ValueError("layer width must be positive")
        if not (self.period > 0):
            raise ValueError("layer period must be positive (use inf for a steady layer)")


@dataclass(frozen=True)
class SyntheticWind:
    layers: tuple
    domain: Grid3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(
            ly if isinstance(ly, WindLayer) else WindLayer(**ly) for ly in self.layers))

    @property
    def max_speed(self) -> float:
        return float(sum(math.hypot(ly.vx, ly.vy) for ly in self.layers))


def _modulation(layer: WindLayer, t: float) -> float:
    if math.isinf(layer.period):
        return math.cos(layer.phase)
    return math.cos(2.0 * math.pi * t / layer.period + layer.phase)


def wind_eval_many(w: SyntheticWind, points, t: float) -> np.ndarray:
    """True wind (m/s) at ``points`` (km, shape ``(k, 3)``) at time ``t`` (hours)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    slack = 1e-12 * np.maximum(1.0, w.domain.upper - w.domain.lower)
    bad = np.any((pts < w.domain.lower - slack) | (pts > w.domain.upper + slack), axis=1)
    if np.any(bad):
        raise OutOfDomainError(pts[np.argmax(bad)])
    z = pts[:, 2]
    out = np.zeros((len(pts), 3))
    for ly in w.layers:
        amp = np.exp(-(((z - ly.z_center) / ly.z_width) ** 2)) * _modulation(ly, t)
        out[:, 0] += amp * ly.vx
        out[:, 1] += amp * ly.vy
    return out


def wind_eval(w: SyntheticWind, p, t: float) -> np.ndarray:
    return wind_eval_many(w, np.asarray(p, dtype=float).reshape(1, 3), t)[0]


def snapshot_campaign(w: SyntheticWind, grid: Grid3, times) -> SnapshotSet:
    """Sample the true wind on ``grid`` at each of ``times`` (hours)."""
    if not (w.domain.contains(grid.lower) and w.domain.contains(grid.upper)):
        raise OutOfDomainError(grid.upper, "snapshot grid extends beyond the wind domain")
    pts = grid.points()
    snaps = [VectorField3(grid, wind_eval_many(w, pts, float(t))) for t in times]
    return SnapshotSet(grid, tuple(snaps), np.asarray(times, dtype=float))


def agent_step(x, t: float, dt: float, u_z: float, wind_truth, bounds=None):
    """Advance the agent one forward-Euler step under the true wind.

    ``wind_truth(p, t)`` returns m/s; ``x`` and ``bounds`` are km, ``dt`` is
    seconds. Returns ``(x_next, clamped)``.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    v = np.asarray(wind_truth(x, t), dtype=float).reshape(3)
    nxt = x + (dt / M_PER_KM) * (v + np.array([0.0, 0.0, u_z]))
    if bounds is None:
        return nxt, False
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    clipped = np.clip(nxt, lo, hi)
    return clipped, bool(np.any(clipped != nxt))


def default_sensor_network(grid: Grid3, count: int = 7) -> SensorNetwork:
    """``count`` tri-component sensors on grid nodes, spread over the interior.

    Nodes are chosen on an interior lattice and staggered in altitude so the
    network sees every wind layer.
    """
    nx, ny, nz = grid.dims
    X, Y, Z = grid.axes()
    pos = []
    for s in range(count):
        frac = (s + 0.5) / count
        i = 1 + (s * 3) % max(nx - 2, 1)
        j = 1 + (s * 5) % max(ny - 2, 1)
        k = 1 + int(round(frac * (nz - 3)))
        pos.append((X[min(i, nx - 2)], Y[min(j, ny - 2)], Z[min(k, nz - 2)]))
    return SensorNetwork(np.array(pos), tuple(("x", "y", "z") for _ in pos))


@dataclass(frozen=True, eq=False)
class Scenario:
    wind: SyntheticWind
    sensors: SensorNetwork
    agent_start: np.ndarray
    station_center: tuple = (0.0, 0.0)
    station_radius: float = 50.0
    episode_hours: float = 24.0
    sample_minutes: float = 10.0
    noise_std: float = 0.1
    seed: int = 42
    bounds: tuple = None
    start_hour: float = 0.0

    def __post_init__(self):
        start = np.array(self.agent_start, dtype=float).reshape(3)
        if not self.wind.domain.contains(start):
            raise ValueError("agent start lies outside the wind domain")
        if self.station_radius <= 0:
            raise ValueError("station radius must be positive")
        if self.episode_hours < 0 or self.sample_minutes <= 0:
            raise ValueError("episode length must be >= 0 and sampling period > 0")
        object.__setattr__(self, "agent_start", start)
        if self.bounds is None:
            object.__setattr__(self, "bounds", (self.wind.domain.lower, self.wind.domain.upper))

    @property
    def dt(self) -> float:
        return self.sample_minutes * 60.0

    @property
    def n_steps(self) -> int:
        return int(round(self.episode_hours * 60.0 / self.sample_minutes))


@dataclass(frozen=True)
class PlannerSettings:
    """Planner configuration shared by every step of an episode."""

    horizon_hours: float = 3.0
    w_p: float = 1.0
    w_u: float = 1e4
    w_f: float = 1.0
    u_max: float = 1.0
    distance_mode: str = "horizontal"
    max_iter: int = 200
    altitude_ref: float | None = None


@dataclass
class EpisodeLog:
    """Uniformly sampled closed-loop record.

    Row ``k`` holds the state at ``t_k`` after the filter update, the input
    applied over ``[t_k, t_k + dt)`` (zero on the last row), and the true and
    predicted winds at the agent.
    """

    dt: float
    station_center: np.ndarray
    station_radius: float
    x_ref: np.ndarray
    distance_mode: str = "horizontal"
    t_hours: list = dc_field(default_factory=list)
    positions: list = dc_field(default_factory=list)
    u_z: list = dc_field(default_factory=list)
    a_hat: list = dc_field(default_factory=list)
    innovation_norm: list = dc_field(default_factory=list)
    wind_true: list = dc_field(default_factory=list)
    wind_pred: list = dc_field(default_factory=list)
    clamped: list = dc_field(default_factory=list)
    solver_iterations: list = dc_field(default_factory=list)
    runtime_s: float = 0.0

    def __len__(self):
        return len(self.t_hours)

    def append(self, t, x, u, a, innov, v_true, v_pred, clamped, iters):
        self.t_hours.append(float(t))
        self.positions.append(np.asarray(x, dtype=float).copy())
        self.u_z.append(float(u))
        self.a_hat.append(np.asarray(a, dtype=float).copy())
        self.innovation_norm.append(float(innov))
        self.wind_true.append(np.asarray(v_true, dtype=float).copy())
        self.wind_pred.append(np.asarray(v_pred, dtype=float).copy())
        self.clamped.append(bool(clamped))
        self.solver_iterations.append(int(iters))

    @property
    def applied_inputs(self) -> np.ndarray:
        return np.asarray(self.u_z[:-1])

    def header(self) -> list[str]:
        n = len(self.a_hat[0]) if self.a_hat else 0
        return (["t_h", "x_km", "y_km", "z_km", "u_z", "innovation_norm",
                 "vx_true", "vy_true", "vz_true", "vx_pred", "vy_pred", "vz_pred", "clamped", "iterations"]
                + [f"a_hat_{i + 1}" for i in range(n)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        for k in range(len(self)):
            row = [f(self.t_hours[k]), *map(f, self.positions[k]), f(self.u_z[k]), f(self.innovation_norm[k]),
                   *map(f, self.wind_true[k]), *map(f, self.wind_pred[k]), str(int(self.clamped[k])),
                   str(self.solver_iterations[k]), *map(f, self.a_hat[k])]
            w.writerow(row)
        return buf.getvalue()


def _planner_problem(sc: Scenario, cfg: PlannerSettings, x, t_s, x_ref) -> PlanProblem:
    N = max(1, int(round(cfg.horizon_hours * SECONDS_PER_HOUR / sc.dt)))
    return PlanProblem(x0=x, N=N, dt=sc.dt, x_ref=x_ref, bounds=sc.bounds, t0=t_s,
                       w_p=cfg.w_p, w_u=cfg.w_u, w_f=cfg.w_f, u_max=cfg.u_max,
                       distance_mode=cfg.distance_mode)


def run_episode(sc: Scenario, basis: PodBasis, model: RomModel, ekf_cfg: EkfConfig,
                plan_cfg: PlannerSettings, initial: EkfState | None = None,
                diagnostics=None) -> EpisodeLog:
    """Run one closed-loop episode.

    The planner only ever sees the ROM forecast wrapped in a
    :class:`~podmpc.observer.PredictedFlow`; the true wind drives the agent
    and the sensors. Measurement noise is drawn from ``numpy.random.Generator``
    (PCG64) seeded with ``sc.seed``.

    Parameters
    ----------
    initial : EkfState, optional
        Initial estimate; defaults to zero coefficients with covariance
        ``diag(eigenvalues)``.
    diagnostics : DiagnosticsWriter, optional
        Receives one filter record per step.

    Raises
    ------
    StepFailure
        Wrapping the first error, with the index of the failing step.
    """
    rng = np.random.default_rng(sc.seed)
    dt = sc.dt
    sensors = sc.sensors
    sensors.check_inside(basis.grid)
    z_ref = plan_cfg.altitude_ref if plan_cfg.altitude_ref is not None else float(sc.agent_start[2])
    x_ref = np.array([sc.station_center[0], sc.station_center[1], z_ref])
    log = EpisodeLog(dt, np.asarray(sc.station_center, dtype=float), sc.station_radius, x_ref,
                     plan_cfg.distance_mode)
    t0_h = sc.start_hour
    st = initial or EkfState(np.zeros(basis.n), np.diag(np.maximum(basis.eigenvalues, 1e-12)),
                             t0_h * SECONDS_PER_HOUR)
    x = sc.agent_start.copy()
    warm = None
    truth = lambda p, t_s: wind_eval(sc.wind, p, t_s / SECONDS_PER_HOUR)  # noqa: E731
    clamped = False
    tic = time.perf_counter()
    for k in range(sc.n_steps + 1):
        t_s = t0_h * SECONDS_PER_HOUR + k * dt
        try:
            if k > 0:
                st = ekf_predict(model, ekf_cfg, st)
            C, y_off = measurement_matrix(basis, sensors, x)
            pts = np.vstack([sensors.fixed_positions, x[None, :]])
            v_pts = wind_eval_many(sc.wind, pts, t_s / SECONDS_PER_HOUR)
            specs = list(sensors.measured_components) + [sensors.mobile_components]
            y = np.array([v_pts[s] @ COMPONENTS[c] for s, comps in enumerate(specs) for c in comps])
            if sc.noise_std > 0:
                y = y + sc.noise_std * rng.standard_normal(y.size)
            R = ekf_cfg.R_meas
            if R.shape[0] != y.size:
                R = float(np.mean(np.diag(R))) * np.eye(y.size)
            st, innov, _ = ekf_update(ekf_cfg, st, C, y_off, y, R=R)
            if diagnostics is not None:
                diagnostics.write(st, innov)

            v_true = v_pts[-1]
            if k == sc.n_steps:
                flow = PredictedFlow(basis, [t_s], [st.a_hat])
                log.append(t_s / SECONDS_PER_HOUR, x, 0.0, st.a_hat, np.linalg.norm(innov),
                           v_true, flow(x, t_s), clamped, 0)
                break

            prob = _planner_problem(sc, plan_cfg, x, t_s, x_ref)
            fc = forecast_field(model, basis, st, prob.horizon, dt, ekf_cfg.dt_max)
            flow = PredictedFlow.from_forecast(basis, fc)
            res = solve_mpc(prob, flow, warm, max_iter=plan_cfg.max_iter)
            u = float(res.u[0])
            warm = shift_warm_start(res.u)
            log.append(t_s / SECONDS_PER_HOUR, x, u, st.a_hat, np.linalg.norm(innov),
                       v_true, flow(x, t_s), clamped, res.iterations)
            x, clamped = agent_step(x, t_s, dt, u, truth, sc.bounds)
        except StepFailure:
            raise
        except Exception as exc:  # abort with the step index attached
            raise StepFailure(k, exc) from exc
    log.runtime_s = time.perf_counter() - tic
    return log


def layered_shear_benchmark(grid_dims=(9, 12, 31)) -> tuple[SyntheticWind, Grid3]:
    """Three-layer shear flow over a 146 km x 220 km x (15-30 km) box.

    The layers blow in different directions so that the agent can hold
    station by moving between altitudes; they oscillate slowly with distinct
    periods so a day of hourly snapshots has full rank.
    """
    grid = Grid3.from_bounds((0.0, 0.0, 15.0), (146.0, 220.0, 30.0), grid_dims)
    layers = (
        WindLayer(z_center=18.0, z_width=2.5, vx=8.0, vy=3.0, period=60.0, phase=0.3),
        WindLayer(z_center=22.5, z_width=2.5, vx=-8.0, vy=3.0, period=84.0, phase=-0.4),
        WindLayer(z_center=27.0, z_width=2.5, vx=1.0, vy=-8.0, period=108.0, phase=0.2),
    )
    return SyntheticWind(layers, grid), grid
