import itertools

import numpy as np
import pytest

from podmpc.errors import OutOfDomainError
from podmpc.field import Grid3, VectorField3
from podmpc.observer import PredictedFlow
from podmpc.planner import (PlanProblem, Trajectory, altitude_seeds, mpc_step, plan_cost, rollout, shift_warm_start,
                            solve_mpc)
from podmpc.planner import _adjoint_gradient, _evaluate
from podmpc.pod import PodBasis

BOX = ((0.0, 0.0, 0.0), (200.0, 200.0, 40.0))


def constant_flow(c):
    c = np.asarray(c, dtype=float)
    return lambda pts, t: np.tile(c, (len(np.atleast_2d(pts)), 1))


def shear_flow(a, b):
    # vx = a (z - 20), vy = b (z - 20)
    def flow(pts, t):
        pts = np.atleast_2d(pts)
        dz = pts[:, 2] - 20.0
        return np.stack([a * dz, b * dz, 0 * dz], axis=1)
    return flow


def problem(**kw):
    base = dict(x0=[50.0, 50.0, 20.0], N=3, dt=600.0, x_ref=[50.0, 50.0, 20.0], bounds=BOX)
    base.update(kw)
    return PlanProblem(**base)


def random_grid_flow(seed, times=(0.0,)):
    g = Grid3.from_bounds(BOX[0], BOX[1], (5, 5, 9))
    rng = np.random.default_rng(seed)
    modes = tuple(VectorField3(g, rng.standard_normal(g.dims + (3,)) * np.array([4.0, 4.0, 0.0]))
                  for _ in range(2))
    basis = PodBasis(g, VectorField3.zeros(g), modes, [1.0, 0.5], 1.5)
    return PredictedFlow(basis, list(times), rng.standard_normal((len(times), 2)))


def test_rollout_examples():
    p = problem()
    tr = rollout(p, np.zeros(3), constant_flow([0, 0, 0]))
    assert np.all(tr.states == p.x0)
    tr = rollout(p, np.ones(3), constant_flow([0, 0, 0]))
    assert tr.states[-1, 2] == pytest.approx(20.0 + 3 * 600 * 1.0 / 1000)
    assert np.all(tr.states[:, :2] == p.x0[:2])
    tr = rollout(p, np.zeros(3), constant_flow([5.0, 0, 0]))
    assert tr.states[-1, 0] == pytest.approx(50.0 + 3 * 600 * 5.0 / 1000)
    assert np.allclose(tr.times, [0, 600, 1200, 1800])


def test_rollout_replayable():
    p = problem(N=6)
    flow = shear_flow(0.7, -0.3)
    u = np.array([1.0, -0.5, 0.2, 0.0, 1.0, -1.0])
    tr = rollout(p, u, flow)
    x = tr.states[0]
    for i in range(p.N):
        x = np.clip(x + p.dt / 1000 * (flow(x[None], 0)[0] + [0, 0, u[i]]), *p.bounds)
        assert np.array_equal(x, tr.states[i + 1])


def test_rollout_clamps_and_flags():
    p = problem(x0=[50.0, 50.0, 39.5])
    tr = rollout(p, np.ones(3), constant_flow([0, 0, 0]))
    assert tr.states[-1, 2] == 40.0
    assert tr.clamped.tolist() == [False, True, True, True]
    assert tr.any_clamped
    # the clamped state costs the boundary penalty
    free = plan_cost(p, Trajectory(tr.states, tr.times, tr.inputs))
    assert plan_cost(p, tr) > free


def test_rollout_rejects_infeasible_and_propagates_domain_errors():
    p = problem()
    with pytest.raises(ValueError):
        rollout(p, [1.5, 0, 0], constant_flow([0, 0, 0]))
    flow = random_grid_flow(0)
    p_edge = problem(x0=[1.0, 50.0, 20.0])
    far = PlanProblem([1.0, 50.0, 20.0], 3, 600.0, [0, 0, 20.0], ((-500, 0, 0), (500, 200, 40)))
    with pytest.raises(OutOfDomainError, match="step"):
        rollout(far, np.zeros(3), lambda pts, t: flow(pts, t) - [50.0, 0, 0])
    assert rollout(p_edge, np.zeros(3), flow).states.shape == (4, 3)


def test_problem_validation():
    with pytest.raises(ValueError):
        problem(N=0)
    with pytest.raises(ValueError):
        problem(x0=[500.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        problem(distance_mode="diagonal")
    assert problem(N=18).horizon == 3 * 3600


def test_cost_examples():
    p = problem()
    tr = rollout(p, np.zeros(3), constant_flow([0, 0, 0]))
    assert plan_cost(p, tr) == 0.0
    q = problem(w_p=0.0, w_f=0.0, w_u=3.0, x_ref=[0.0, 0.0, 0.0])
    u = np.array([0.5, -1.0, 0.25])
    assert plan_cost(q, rollout(q, u, constant_flow([1.0, 2.0, 0]))) == pytest.approx(3.0 * np.sum(u**2))


def test_cost_single_step_hand_value():
    d, u = 7.0, 0.6
    p = problem(N=1, x0=[50.0 + d, 50.0, 20.0], w_p=1.0, w_u=1.0, w_f=2.0)
    J = plan_cost(p, rollout(p, [u], constant_flow([0, 0, 0])))
    assert J == pytest.approx(1 * d**2 + 1 * u**2 + 2 * d**2, rel=1e-14)


def test_cost_3d_mode_counts_altitude():
    p = problem(N=1, x0=[53.0, 50.0, 24.0], distance_mode="3d", w_u=0.0)
    J = plan_cost(p, rollout(p, [0.0], constant_flow([0, 0, 0])))
    assert J == pytest.approx(2 * 25.0)


def test_solve_trivial_optimum():
    p = problem(N=4)
    res = solve_mpc(p, constant_flow([0, 0, 0]))
    assert np.all(res.u == 0.0) and res.cost == 0.0


def test_solve_climb_to_target_saturates():
    # target 1.2 km above, reachable in two saturated steps; effort nearly free
    p = problem(N=5, x_ref=[50.0, 50.0, 21.2], distance_mode="3d", w_u=1e-6, w_p=1.0, w_f=1.0)
    res = solve_mpc(p, constant_flow([0, 0, 0]))
    z = res.trajectory.states[:, 2]
    assert np.all(np.diff(z) >= -1e-4)  # 10 cm
    assert np.allclose(res.u[:2], 1.0, atol=1e-3)
    assert np.allclose(res.u[2:], 0.0, atol=1e-3)


def test_adjoint_gradient_matches_finite_differences():
    flow = random_grid_flow(1, times=(0.0, 7200.0))
    rng = np.random.default_rng(2)
    for mode, z0 in (("horizontal", 20.0), ("3d", 39.0), ("horizontal", 0.5)):
        p = problem(N=12, x0=[100.0, 100.0, z0], x_ref=[60.0, 120.0, 20.0], w_u=10.0, w_f=5.0,
                    distance_mode=mode)
        u = rng.uniform(-1, 1, p.N)
        J, g = _adjoint_gradient(p, u, flow)
        assert J == _evaluate(p, u[None], flow)[0]
        h = 1e-6
        E = np.eye(p.N)
        fd = (_evaluate(p, u + h * E, flow) - _evaluate(p, u - h * E, flow)) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def enumeration_minimum(p, flow):
    grid = [-p.u_max, 0.0, p.u_max]
    U = np.array(list(itertools.product(grid, repeat=p.N)))
    return float(np.min(_evaluate(p, U, flow)))


@pytest.mark.parametrize("gradient", ["fd", "adjoint"])
def test_never_worse_than_enumeration(gradient):
    rng = np.random.default_rng(11)
    for trial in range(6):
        N = 2 + trial % 3
        flow = random_grid_flow(100 + trial)
        p = problem(N=N, x0=[*rng.uniform(40, 160, 2), rng.uniform(5, 35)],
                    x_ref=[*rng.uniform(40, 160, 2), 20.0], w_u=float(rng.uniform(0.1, 10)))
        res = solve_mpc(p, flow, gradient=gradient)
        assert res.cost <= enumeration_minimum(p, flow) + 1e-6


def test_feasibility_and_descent():
    rng = np.random.default_rng(4)
    flow = shear_flow(1.5, 0.4)
    for _ in range(5):
        p = problem(N=8, x_ref=[*rng.uniform(20, 180, 2), 20.0], w_u=float(rng.uniform(0.01, 50)))
        warm = rng.uniform(-1, 1, p.N)
        res = solve_mpc(p, flow, warm_start=warm)
        assert np.all(np.abs(res.u) <= p.u_max)
        assert res.cost <= _evaluate(p, warm[None], flow)[0]
        assert res.cost <= _evaluate(p, np.zeros((1, p.N)), flow)[0]
        assert res.cost == plan_cost(p, rollout(p, res.u, flow))


def test_solver_deterministic():
    flow = random_grid_flow(5)
    p = problem(N=10, x_ref=[120.0, 80.0, 20.0], w_u=1.0)
    a = solve_mpc(p, flow)
    b = solve_mpc(p, flow)
    assert np.array_equal(a.u, b.u) and a.iterations == b.iterations


def test_shift_warm_start():
    assert np.array_equal(shift_warm_start([1.0, 2.0, 3.0]), [2.0, 3.0, 3.0])


def test_mpc_step_examples():
    p = problem(N=4)
    u0, x1, warm, res = mpc_step(p, constant_flow([0, 0, 0]))
    assert u0 == 0.0 and np.array_equal(x1, p.x0)
    assert np.array_equal(warm, shift_warm_start(res.u))


def test_warm_start_needs_no_more_iterations():
    flow = shear_flow(2.0, -1.0)
    p = problem(N=12, x_ref=[90.0, 30.0, 20.0], w_u=1.0)
    cold = solve_mpc(p, flow)
    p2 = p.with_start(cold.trajectory.states[1], p.t0 + p.dt)
    warm = solve_mpc(p2, flow, warm_start=shift_warm_start(cold.u))
    cold2 = solve_mpc(p2, flow)
    assert warm.iterations <= cold2.iterations


def test_altitude_seeds_reach_and_hold():
    p = problem(N=10, x0=[50.0, 50.0, 20.0], bounds=((0, 0, 15.0), (200, 200, 30.0)))
    seeds = altitude_seeds(p, levels=7)
    assert len(seeds) == 7
    assert np.all(seeds[0] == -1.0) and np.all(seeds[-1] == 1.0)
    still = constant_flow([0, 0, 0])
    for z_target, u in zip(np.linspace(15.0, 30.0, 7)[1:-1], seeds[1:-1]):
        assert np.all(np.abs(u) <= p.u_max)
        z = rollout(p, u, still).states[:, 2]
        reach = min(p.N * 0.6, abs(z_target - 20.0))
        assert abs(z[-1] - 20.0) == pytest.approx(reach, abs=1e-12)
