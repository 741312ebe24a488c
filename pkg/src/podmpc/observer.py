"""
Discrete-time extended Kalman filter on the modal coefficients.

Sensors measure the *total* velocity, while the filter state holds the
fluctuation coefficients, so the measurement model is ``y = C a + y_offset``
where ``y_offset`` is the sensed functional of the mean field. Each row of
``C`` evaluates one velocity component (or the sum of all three) of every mode
at a sensor position; the rows for the moving agent are appended last and are
rebuilt at every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, DimensionError
from .field import Grid3, sample_many, sample_many_with_gradient
from .pod import PodBasis
from .rom import RomModel, RomState, _rk4

__all__ = [
    "COMPONENTS",
    "SensorNetwork",
    "EkfState",
    "EkfConfig",
    "measurement_matrix",
    "ekf_predict",
    "ekf_update",
    "forecast_field",
    "PredictedFlow",
    "DiagnosticsWriter",
]

# row selector applied to a sampled 3-vector
COMPONENTS = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
    "sum": np.array([1.0, 1.0, 1.0]),
}

_COND_LIMIT = 1e14


@dataclass(frozen=True, eq=False)
class SensorNetwork:
    """Fixed sensors: one position and a tuple of measured components each.

    Parameters
    ----------
    fixed_positions : array_like, shape (s, 3)
    measured_components : sequence
        One entry per sensor, either a single component name (``"x"``, ``"y"``,
        ``"z"`` or ``"sum"``) or a tuple of names; each name yields one row.
    mobile_components : tuple of str
        Rows contributed by the agent when it acts as a sensor.
    """

    fixed_positions: np.ndarray
    measured_components: tuple
    mobile_components: tuple = ("x", "y", "z")

    def __post_init__(self):
        pos = np.array(self.fixed_positions, dtype=float).reshape(-1, 3)
        comps = tuple((c,) if isinstance(c, str) else tuple(c) for c in self.measured_components)
        if len(comps) != len(pos):
            raise DimensionError(f"{len(pos)} sensors but {len(comps)} component specs")
        for spec in comps + (tuple(self.mobile_components),):
            for c in spec:
                if c not in COMPONENTS:
                    raise ValueError(f"unknown measured component {c!r}")
        object.__setattr__(self, "fixed_positions", pos)
        object.__setattr__(self, "measured_components", comps)
        object.__setattr__(self, "mobile_components", tuple(self.mobile_components))

    @property
    def n_fixed_rows(self) -> int:
        return sum(len(c) for c in self.measured_components)

    def n_rows(self, mobile: bool = True) -> int:
        return self.n_fixed_rows + (len(self.mobile_components) if mobile else 0)

    def check_inside(self, grid: Grid3):
        """Raise unless every sensor lies strictly inside the grid box."""
        lo, hi = grid.lower, grid.upper
        for p in self.fixed_positions:
            if not (np.all(p > lo) and np.all(p < hi)):
                raise ValueError(f"sensor at {tuple(p)} is not strictly inside the domain")


@dataclass(frozen=True, eq=False)
class EkfState:
    a_hat: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        a = np.array(self.a_hat, dtype=float).reshape(-1)
        P = np.array(self.P, dtype=float).reshape(a.size, a.size)
        object.__setattr__(self, "a_hat", a)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True, eq=False)
class EkfConfig:
    """Process noise ``Q_proc``, measurement noise ``R_meas`` and sampling period ``dt``.

    ``dt_max`` is the Runge-Kutta step used inside the discrete prediction map.
    """

    Q_proc: np.ndarray
    R_meas: np.ndarray
    dt: float
    dt_max: float = 60.0

    def __post_init__(self):
        Qp = np.atleast_2d(np.array(self.Q_proc, dtype=float))
        R = np.atleast_2d(np.array(self.R_meas, dtype=float))
        if self.dt <= 0 or self.dt_max <= 0:
            raise ValueError("dt and dt_max must be positive")
        _check_psd(Qp, "Q_proc", strict=False)
        _check_psd(R, "R_meas", strict=True)
        object.__setattr__(self, "Q_proc", Qp)
        object.__setattr__(self, "R_meas", R)

    @classmethod
    def diagonal(cls, n: int, p: int, q: float, r: float, dt: float, dt_max: float = 60.0) -> EkfConfig:
        return cls(q * np.eye(n), r * np.eye(p), dt, dt_max)


def _check_psd(M, name, strict):
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if M.size == 0:
        return
    eig_min = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    tol = 1e-10 * max(1.0, float(np.max(np.abs(M))))
    if strict and eig_min <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    if eig_min < -tol:
        raise ValueError(f"{name} must be positive semi-definite")


def _rows(samples: np.ndarray, comps) -> np.ndarray:
    # samples: (..., 3) -> one value per component name
    if not comps:
        return np.zeros((0,) + samples.shape[:-1])
    return np.stack([samples @ COMPONENTS[c] for c in comps], axis=0)


def measurement_matrix(basis: PodBasis, fixed: SensorNetwork, mobile_position=None):
    """Linear measurement model at the current sensor geometry.

    Returns
    -------
    C : ndarray, shape (p, n)
    y_offset : ndarray, shape (p,)
        The same functionals applied to the mean field.
    """
    grid = basis.grid
    positions = [p for p in fixed.fixed_positions]
    specs = list(fixed.measured_components)
    if mobile_position is not None:
        positions.append(np.asarray(mobile_position, dtype=float).reshape(3))
        specs.append(fixed.mobile_components)
    if not positions:
        return np.zeros((0, basis.n)), np.zeros(0)
    pts = np.array(positions)
    modes = sample_many(basis.mode_array, grid, pts)   # (s, n, 3)
    mean = sample_many(basis.mean.values, grid, pts)    # (s, 3)
    C_rows, off = [], []
    for s, comps in enumerate(specs):
        C_rows.append(_rows(modes[s], comps))          # (len(comps), n)
        off.append(_rows(mean[s], comps))
    return np.vstack(C_rows), np.concatenate(off)


def _symmetrize(P):
    return 0.5 * (P + P.T)


def ekf_predict(model: RomModel, cfg: EkfConfig, st: EkfState) -> EkfState:
    """Propagate the estimate through the RK4 map and the covariance through its Jacobian.

    The Jacobian of the discrete map is taken by central differences with
    step ``1e-6 * max(1, ||a_hat||)``; all ``2n + 1`` integrations run as one
    batch.
    """
    a = st.a_hat
    n = a.size
    h = 1e-6 * max(1.0, float(np.linalg.norm(a)))
    batch = np.vstack([a[None, :], a + h * np.eye(n), a - h * np.eye(n)])
    out = _rk4(model, batch, st.t, st.t + cfg.dt, cfg.dt_max)
    a_pred = out[0]
    A = ((out[1:n + 1] - out[n + 1:]) / (2.0 * h)).T
    P = _symmetrize(A @ st.P @ A.T + cfg.Q_proc)
    return EkfState(a_pred, P, st.t + cfg.dt)


def ekf_update(cfg: EkfConfig, st: EkfState, C, y_offset, y, R=None):
    """Kalman correction with measurement ``y = C a + y_offset + noise``.

    ``R`` overrides ``cfg.R_meas`` (useful when the number of rows changes).

    Returns
    -------
    state : EkfState
    innovation : ndarray, shape (p,)
    S : ndarray, shape (p, p)
        Innovation covariance ``C P C^T + R``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    y_offset = np.asarray(y_offset, dtype=float).reshape(-1)
    R = cfg.R_meas if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    n = st.a_hat.size
    p = y.size
    if C.shape != (p, n) or y_offset.shape != (p,) or R.shape != (p, p):
        raise DimensionError(f"inconsistent update sizes: C {C.shape}, y {y.shape}, "
                             f"y_offset {y_offset.shape}, R {R.shape}, n = {n}")
    innovation = y - y_offset - C @ st.a_hat
    S = _symmetrize(C @ st.P @ C.T + R)
    if p == 0:
        return st, innovation, S
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > _COND_LIMIT:
        raise ConditioningError("innovation covariance is singular or ill-conditioned")
    K = np.linalg.solve(S, C @ st.P).T
    a_new = st.a_hat + K @ innovation
    P_new = _symmetrize((np.eye(n) - K @ C) @ st.P)
    return EkfState(a_new, P_new, st.t), innovation, S


def forecast_field(model: RomModel, basis: PodBasis, st: EkfState, horizon: float, dt: float,
                   dt_max: float = 60.0) -> list[tuple[float, RomState]]:
    """Open-loop ROM forecast from the current estimate, sampled every ``dt``.

    The samples sit at ``t, t + dt, ..., t + K dt`` with ``K = round(horizon / dt)``.
    """
    if horizon < 0 or dt <= 0:
        raise ValueError("horizon must be >= 0 and dt > 0")
    if st.a_hat.size != basis.n:
        raise DimensionError("estimate and basis disagree on the number of modes")
    steps = int(round(horizon / dt))
    out = [(st.t, RomState(st.a_hat.copy(), st.t))]
    a = st.a_hat
    for i in range(1, steps + 1):
        t_prev, t_next = st.t + (i - 1) * dt, st.t + i * dt
        a = _rk4(model, a, t_prev, t_next, dt_max)
        out.append((t_next, RomState(a, t_next)))
    return out


class PredictedFlow:
    """Velocity forecast ``mean + sum_i a_i(t) phi_i`` queryable at points and times.

    The coefficient trajectory is reconstructed on the grid once per forecast
    sample; queries interpolate trilinearly in space and linearly in time.
    Times are in seconds.
    """

    def __init__(self, basis: PodBasis, times, coeffs):
        times = np.asarray(times, dtype=float)
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if coeffs.shape != (times.size, basis.n):
            raise DimensionError("need one coefficient vector per forecast time")
        self.grid = basis.grid
        self.times = times
        self.coeffs = coeffs
        self.fields = basis.mean.values[None] + np.einsum("tn,...nc->t...c", coeffs, basis.mode_array)

    @classmethod
    def from_forecast(cls, basis: PodBasis, forecast) -> PredictedFlow:
        return cls(basis, [t for t, _ in forecast], [s.a for _, s in forecast])

    @property
    def lower(self):
        return self.grid.lower

    @property
    def upper(self):
        return self.grid.upper

    def _slot(self, t):
        if self.times.size == 1:
            return 0, 0.0
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        i = min(max(i, 0), self.times.size - 2)
        span = self.times[i + 1] - self.times[i]
        frac = min(max((t - self.times[i]) / span, 0.0), 1.0)
        return i, frac

    def __call__(self, points, t: float) -> np.ndarray:
        """Velocities at ``points`` (shape ``(k, 3)`` or ``(3,)``) at time ``t``."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        i, frac = self._slot(t)
        v = sample_many(self.fields[i], self.grid, pts)
        if frac > 0.0:
            v = (1.0 - frac) * v + frac * sample_many(self.fields[i + 1], self.grid, pts)
        return v[0] if single else v

    def value_and_jacobian(self, points, t: float):
        """Velocities ``(k, 3)`` and spatial Jacobians ``(k, 3, 3)`` in m/s per grid unit."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        i, frac = self._slot(t)
        v, J = sample_many_with_gradient(self.fields[i], self.grid, pts)
        if frac > 0.0:
            v1, J1 = sample_many_with_gradient(self.fields[i + 1], self.grid, pts)
            v = (1.0 - frac) * v + frac * v1
            J = (1.0 - frac) * J + frac * J1
        return v, J


class DiagnosticsWriter:
    """Per-step filter diagnostics: ``t, innovation_norm, trace_P, a_hat_1..n``."""

    def __init__(self, fh, n: int):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(["t", "innovation_norm", "trace_P"] + [f"a_hat_{i + 1}" for i in range(n)])

    def write(self, st: EkfState, innovation) -> None:
        vals = [st.t, float(np.linalg.norm(innovation)), float(np.trace(st.P))] + list(st.a_hat)
        self._w.writerow([format(float(v), ".17g") for v in vals])
