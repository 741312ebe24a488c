"""
Receding-horizon planner for an agent advected by a predicted wind field.

Positions are in km, velocities and the vertical command in m/s, and time in
seconds. The prediction model is forward Euler,

    x[i+1] = clamp(x[i] + dt * (v_pred(x[i], t0 + i dt) + u[i] e_z) / 1000),

and the cost is

    J = w_f |x[N] - x_ref|^2 + sum_{i<N} (w_p |x[i] - x_ref|^2 + w_u u[i]^2)
        + 1000 w_p * sum_i |overshoot_i|^2,

where the last term penalizes positions that had to be clamped back into the
box. Distances are horizontal (x, y) unless ``distance_mode == "3d"``.

The optimizer is a projected quasi-Newton (BFGS) method with an Armijo line
search along the projected path. When the flow exposes ``value_and_jacobian``
the gradient comes from an adjoint sweep through the rollout; otherwise it is
taken by central finite differences with all perturbed sequences rolled out as
one batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import OutOfDomainError

__all__ = [
    "M_PER_KM",
    "PlanProblem",
    "Trajectory",
    "MpcResult",
    "rollout",
    "plan_cost",
    "solve_mpc",
    "mpc_step",
    "shift_warm_start",
    "altitude_seeds",
]

M_PER_KM = 1000.0
BOUNDARY_PENALTY = 1e3
ARMIJO_SIGMA = 1e-4
LINE_SEARCH_TRIALS = 16

Flow = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class PlanProblem:
    """One finite-horizon planning problem.

    ``bounds`` is a pair ``(lower, upper)`` of 3-vectors in km. ``t0`` and
    ``dt`` are seconds, so the prediction horizon is ``N * dt``.
    """

    x0: np.ndarray
    N: int
    dt: float
    x_ref: np.ndarray
    bounds: tuple
    t0: float = 0.0
    w_p: float = 1.0
    w_u: float = 1e4
    w_f: float = 1.0
    u_max: float = 1.0
    distance_mode: str = "horizontal"

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(3)
        x_ref = np.array(self.x_ref, dtype=float).reshape(3)
        lo, hi = (np.array(b, dtype=float).reshape(3) for b in self.bounds)
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if self.dt <= 0 or self.u_max <= 0:
            raise ValueError("dt and u_max must be positive")
        if min(self.w_p, self.w_u, self.w_f) < 0:
            raise ValueError("cost weights must be non-negative")
        if np.any(lo > hi):
            raise ValueError("bounds lower corner exceeds upper corner")
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValueError(f"initial position {x0.tolist()} lies outside the state bounds")
        if not np.all(np.isfinite(x_ref)):
            raise ValueError("x_ref must be finite")
        if self.distance_mode not in ("horizontal", "3d"):
            raise ValueError(f"distance_mode must be 'horizontal' or '3d', got {self.distance_mode!r}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x_ref", x_ref)
        object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "N", int(self.N))

    @property
    def horizon(self) -> float:
        return self.N * self.dt

    def with_start(self, x0, t0) -> PlanProblem:
        return replace(self, x0=x0, t0=t0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Rolled-out states (``N+1``), their times and the ``N`` inputs.

    ``clamped[i]`` marks states that were pulled back into the bounds and
    ``overshoot[i]`` is the squared distance they were moved.
    """

    states: np.ndarray
    times: np.ndarray
    inputs: np.ndarray
    clamped: np.ndarray = dc_field(default=None)
    overshoot: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        n = len(self.states)
        if self.clamped is None:
            object.__setattr__(self, "clamped", np.zeros(n, dtype=bool))
        if self.overshoot is None:
            object.__setattr__(self, "overshoot", np.zeros(n))

    @property
    def any_clamped(self) -> bool:
        return bool(np.any(self.clamped))


class MpcResult(NamedTuple):
    u: np.ndarray
    trajectory: Trajectory
    cost: float
    iterations: int


def _rollout_batch(prob: PlanProblem, U: np.ndarray, flow: Flow):
    """Roll out a batch of input sequences ``U`` of shape ``(B, N)``."""
    B, N = U.shape
    lo, hi = prob.bounds
    X = np.empty((B, N + 1, 3))
    excess = np.zeros((B, N + 1))
    X[:, 0] = prob.x0
    scale = prob.dt / M_PER_KM
    for i in range(N):
        t = prob.t0 + i * prob.dt
        try:
            v = flow(X[:, i], t)
        except OutOfDomainError as exc:
            raise OutOfDomainError(exc.point, f"rollout step {i}: {exc}") from exc
        nxt = X[:, i] + scale * v
        nxt[:, 2] += scale * U[:, i]
        clipped = np.clip(nxt, lo, hi)
        excess[:, i + 1] = np.sum((nxt - clipped) ** 2, axis=1)
        X[:, i + 1] = clipped
    return X, excess


def _cost_batch(prob: PlanProblem, X: np.ndarray, U: np.ndarray, excess: np.ndarray) -> np.ndarray:
    d = X - prob.x_ref
    if prob.distance_mode == "horizontal":
        d = d[..., :2]
    sq = np.sum(d * d, axis=-1)
    J = prob.w_f * sq[:, -1] + prob.w_p * np.sum(sq[:, :-1], axis=1) + prob.w_u * np.sum(U * U, axis=1)
    return J + BOUNDARY_PENALTY * prob.w_p * np.sum(excess, axis=1)


def rollout(prob: PlanProblem, u, flow: Flow) -> Trajectory:
    """Forward-Euler rollout of ``u`` through ``flow`` starting at ``prob.x0``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != prob.N:
        raise ValueError(f"expected {prob.N} inputs, got {u.size}")
    if np.any(np.abs(u) > prob.u_max * (1 + 1e-12)):
        raise ValueError("input sequence violates |u| <= u_max")
    X, excess = _rollout_batch(prob, u[None, :], flow)
    times = prob.t0 + prob.dt * np.arange(prob.N + 1)
    return Trajectory(X[0], times, u.copy(), excess[0] > 0.0, excess[0])


def plan_cost(prob: PlanProblem, traj: Trajectory) -> float:
    if len(traj.states) != len(traj.inputs) + 1:
        raise ValueError("trajectory needs one more state than inputs")
    X = np.asarray(traj.states)[None]
    U = np.asarray(traj.inputs)[None]
    return float(_cost_batch(prob, X, U, np.asarray(traj.overshoot)[None])[0])


def _evaluate(prob, U, flow):
    X, excess = _rollout_batch(prob, U, flow)
    return _cost_batch(prob, X, U, excess)


def _adjoint_gradient(prob: PlanProblem, u: np.ndarray, flow) -> tuple[float, np.ndarray]:
    """Cost and its exact gradient for one input sequence by a backward sweep.

    Needs ``flow.value_and_jacobian(points, t) -> (v, dv/dx)``. Clamping is
    differentiated as the identity on free components and zero on clamped ones.
    """
    N = prob.N
    lo, hi = prob.bounds
    s = prob.dt / M_PER_KM
    X = np.empty((N + 1, 3))
    raw = np.empty((N + 1, 3))
    Jv = np.empty((N, 3, 3))
    X[0] = raw[0] = prob.x0
    for i in range(N):
        try:
            v, J = flow.value_and_jacobian(X[i][None, :], prob.t0 + i * prob.dt)
        except OutOfDomainError as exc:
            raise OutOfDomainError(exc.point, f"rollout step {i}: {exc}") from exc
        Jv[i] = J[0]
        raw[i + 1] = X[i] + s * v[0]
        raw[i + 1, 2] += s * u[i]
        X[i + 1] = np.clip(raw[i + 1], lo, hi)
    excess = np.sum((raw - X) ** 2, axis=1)
    excess[0] = 0.0
    cost = float(_cost_batch(prob, X[None], u[None], excess[None])[0])

    proj = np.array([1.0, 1.0, 0.0]) if prob.distance_mode == "horizontal" else np.ones(3)
    d = (X - prob.x_ref) * proj
    free = (raw >= lo) & (raw <= hi)
    pen = 2.0 * BOUNDARY_PENALTY * prob.w_p
    grad = 2.0 * prob.w_u * u
    lam = 2.0 * prob.w_f * d[N]                     # dJ / dX[N]
    for i in range(N - 1, -1, -1):
        g_raw = free[i + 1] * lam + pen * (raw[i + 1] - X[i + 1])
        grad[i] += s * g_raw[2]
        lam = g_raw + s * (Jv[i].T @ g_raw) + 2.0 * prob.w_p * d[i]
    return cost, grad


def altitude_seeds(prob: PlanProblem, levels: int = 9) -> list[np.ndarray]:
    """Input sequences that move at full rate to one of ``levels`` altitudes and hold it.

    The altitudes are spread evenly over the vertical bounds; the two extremes
    give the constant saturated sequences ``+-u_max``.
    """
    lo, hi = prob.bounds[0][2], prob.bounds[1][2]
    rate = prob.u_max * prob.dt / M_PER_KM   # km per step at full climb
    seeds = []
    for z in np.linspace(lo, hi, levels):
        dz = z - prob.x0[2]
        u = np.zeros(prob.N)
        if z in (lo, hi):
            u[:] = np.sign(dz) * prob.u_max if dz != 0 else 0.0
        else:
            full, rest = divmod(abs(dz), rate)
            k = min(int(full), prob.N)
            u[:k] = np.sign(dz) * prob.u_max
            if k < prob.N:
                u[k] = np.sign(dz) * prob.u_max * rest / rate
        seeds.append(u)
    return seeds


def _fit_length(u, N):
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size >= N:
        return u[:N].copy()
    fill = u[-1] if u.size else 0.0
    return np.concatenate([u, np.full(N - u.size, fill)])


def solve_mpc(prob: PlanProblem, flow: Flow, warm_start=None, max_iter: int = 200,
              tol: float = 1e-6, gradient: str = "auto") -> MpcResult:
    """Minimize the horizon cost over ``|u_i| <= u_max``.

    Parameters
    ----------
    prob : PlanProblem
    flow : callable
        ``flow(points, t)`` returning velocities (m/s) of shape ``(k, 3)``.
    warm_start : array_like, optional
        Initial guess, already aligned with the current horizon (see
        :func:`shift_warm_start`). Padded or truncated to length ``N``.
    max_iter : int
        Maximum number of accepted descent steps.
    tol : float
        Stop when the projected-gradient norm drops below ``tol * (1 + |J|)``.
    gradient : {"auto", "fd", "adjoint"}
        ``"auto"`` uses the adjoint sweep when ``flow`` has
        ``value_and_jacobian`` and central differences (step ``1e-4 u_max``)
        otherwise.

    Returns
    -------
    MpcResult
        ``(u, trajectory, cost, iterations)``. ``u`` is always feasible and its
        cost never exceeds that of the warm start or of ``u = 0``.

    Notes
    -----
    Descent starts from the cheapest of the warm start, zero input and a set
    of climb-then-hold sequences (see :func:`altitude_seeds`); on this
    non-convex cost that avoids stalling in the basin of a poor initial guess.
    """
    N, umax = prob.N, prob.u_max
    starts = []
    if warm_start is not None:
        starts.append(np.clip(_fit_length(warm_start, N), -umax, umax))
    starts.append(np.zeros(N))
    starts.extend(altitude_seeds(prob))
    S = np.array(starts)
    J_s = _evaluate(prob, S, flow)
    best = int(np.argmin(J_s))
    u, J = S[best].copy(), float(J_s[best])

    h = 1e-4 * umax
    eye = np.eye(N)
    if gradient not in ("auto", "fd", "adjoint"):
        raise ValueError(f"unknown gradient method {gradient!r}")
    exact = gradient == "adjoint" or (gradient == "auto" and hasattr(flow, "value_and_jacobian"))

    def grad(u):
        if exact:
            return _adjoint_gradient(prob, u, flow)[1]
        Jp = _evaluate(prob, np.vstack([u + h * eye, u - h * eye]), flow)
        return (Jp[:N] - Jp[N:]) / (2.0 * h)

    def search(u, J, g, d, step):
        # projected Armijo backtracking along u + t d
        ts = step * 0.5 ** np.arange(LINE_SEARCH_TRIALS)
        cand = np.clip(u[None, :] + ts[:, None] * d[None, :], -umax, umax)
        Jc = _evaluate(prob, cand, flow)
        ok = np.nonzero((Jc <= J + ARMIJO_SIGMA * ((cand - u[None, :]) @ g)) & (Jc < J))[0]
        if ok.size == 0:
            return None
        return cand[ok[0]], float(Jc[ok[0]])

    # projected BFGS: quasi-Newton on the free inputs, steepest descent on the
    # bound-active ones, plain gradient steps whenever that direction fails
    B = None   # Hessian approximation
    iterations = 0
    g = grad(u)
    for _ in range(max_iter):
        pg = np.clip(u - g, -umax, umax) - u
        if np.linalg.norm(pg) < tol * (1.0 + abs(J)):
            break
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0:
            break
        found = None
        if B is not None:
            eps = min(1e-3 * umax, float(np.linalg.norm(pg)))
            active = ((u <= -umax + eps) & (g > 0)) | ((u >= umax - eps) & (g < 0))
            free = ~active
            d = -g.copy()
            if np.any(free):
                d[free] = np.linalg.solve(B[np.ix_(free, free)], -g[free])
            if d @ g < 0:
                found = search(u, J, g, d, 1.0)
        if found is None:
            B = None
            found = search(u, J, g, -g, 2.0 * umax / gmax)
            if found is None:
                break
        u_new, J_new = found
        g_new = grad(u_new)
        s, y = u_new - u, g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if B is None:
                B = (float(y @ y) / sy) * eye
            Bs = B @ s
            B = B + np.outer(y, y) / sy - np.outer(Bs, Bs) / float(s @ Bs)
        u, J, g = u_new, J_new, g_new
        iterations += 1

    traj = rollout(prob, u, flow)
    return MpcResult(u, traj, plan_cost(prob, traj), iterations)


def shift_warm_start(u) -> np.ndarray:
    """Drop the first input and repeat the last one."""
    u = np.asarray(u, dtype=float)
    return np.concatenate([u[1:], u[-1:]])


def mpc_step(prob: PlanProblem, flow: Flow, warm=None):
    """Solve, apply the first input for one predicted step, and shift the solution.

    Returns ``(u_applied, x_next, next_warm, result)``; ``x_next`` is the
    planner's own one-step prediction.
    """
    res = solve_mpc(prob, flow, warm)
    return float(res.u[0]), res.trajectory.states[1].copy(), shift_warm_start(res.u), res
