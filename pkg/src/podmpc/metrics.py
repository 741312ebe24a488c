"""Episode performance metrics and field-error diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError
from .field import VectorField3
from .planner import M_PER_KM

__all__ = [
    "EpisodeMetrics",
    "final_distance",
    "mean_alignment",
    "control_rms",
    "field_rmse",
    "time_in_station",
    "episode_metrics",
]

# steps where either velocity is slower than this (m/s) are skipped by mean_alignment
DEGENERATE_SPEED = 1e-9


@dataclass(frozen=True)
class EpisodeMetrics:
    """Summary of one episode.

    ``runtime_s`` is wall time of the closed loop only (training excluded).
    ``time_in_station_fraction`` is an extension: the share of logged samples
    that lie within the station radius.
    """

    d_f: float
    gamma_bar: float
    u_rms: float
    runtime_s: float
    time_in_station_fraction: float

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime_s")
        return d

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"


def _distance(p, ref, mode):
    d = np.asarray(p, dtype=float) - np.asarray(ref, dtype=float)
    if mode == "horizontal":
        d = d[..., :2]
    return np.sqrt(np.sum(d * d, axis=-1))


def final_distance(log) -> float:
    """Distance (km) from the last logged position to the target."""
    if len(log) == 0:
        raise UndefinedMetricError("final distance of an empty log")
    return float(_distance(log.positions[-1], log.x_ref, log.distance_mode))


def mean_alignment(log) -> float:
    """Time-averaged cosine between realized velocity and the predicted wind.

    The realized velocity over step ``k`` is the logged displacement divided by
    the sampling period; it is compared with the predicted wind at the agent at
    the start of the step.
    """
    if len(log) < 2:
        raise UndefinedMetricError("alignment needs at least two records")
    X = np.asarray(log.positions)
    vel = np.diff(X, axis=0) * M_PER_KM / log.dt
    pred = np.asarray(log.wind_pred)[:-1]
    nv = np.linalg.norm(vel, axis=1)
    npred = np.linalg.norm(pred, axis=1)
    ok = (nv >= DEGENERATE_SPEED) & (npred >= DEGENERATE_SPEED)
    if not np.any(ok):
        raise UndefinedMetricError("every step has a degenerate velocity")
    cos = np.sum(vel[ok] * pred[ok], axis=1) / (nv[ok] * npred[ok])
    return float(np.clip(np.mean(np.clip(cos, -1.0, 1.0)), -1.0, 1.0))


def control_rms(log_or_inputs) -> float:
    """Root mean square of the applied vertical commands (m/s); 0 for no inputs."""
    u = log_or_inputs.applied_inputs if hasattr(log_or_inputs, "applied_inputs") else log_or_inputs
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(u * u)))


def field_rmse(truth: VectorField3, predicted: VectorField3) -> float:
    """``sqrt(mean over nodes of |v_true - v_pred|^2)`` (unweighted node average)."""
    if truth.grid != predicted.grid:
        raise DimensionError("fields live on different grids")
    d = truth.values - predicted.values
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))


def time_in_station(log) -> float:
    if len(log) == 0:
        raise UndefinedMetricError("empty log")
    X = np.asarray(log.positions)
    d = _distance(X[:, :2], np.asarray(log.station_center)[:2], "horizontal")
    return float(np.mean(d <= log.station_radius))


def episode_metrics(log) -> EpisodeMetrics:
    try:
        gamma = mean_alignment(log)
    except UndefinedMetricError:
        gamma = float("nan")
    return EpisodeMetrics(
        d_f=final_distance(log),
        gamma_bar=gamma,
        u_rms=control_rms(log),
        runtime_s=float(log.runtime_s),
        time_in_station_fraction=time_in_station(log),
    )
