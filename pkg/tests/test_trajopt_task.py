import dataclasses

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from oracles import integral_of_square, refined_cost_gap, refined_solve
from tossjuggle import qp
from tossjuggle.ballistics import BallState, propagate
from tossjuggle.pattern import PatternSpec, compute_geometry, derive_timing, generate_schedule
from tossjuggle.trajopt_task import (CycleProblem, PlannerConfig, PlanningError, build_problem,
                                     integrate_jerk, kkt_multiplier_check, nominal_problem,
                                     sample_many, sample_trajectory, solve_cycle)


@pytest.fixture(scope="module")
def three_ball():
    p = nominal_problem(PatternSpec(3))
    return p, solve_cycle(p)


def test_integrate_single_step():
    X, V, A = integrate_jerk(np.zeros(1), np.zeros(1), np.zeros(1), [[6.0]], 1.0)
    assert (X[1, 0], V[1, 0], A[1, 0]) == (1.0, 3.0, 6.0)


def test_integrate_matches_ode_solution():
    rng = np.random.default_rng(0)
    K, dt = 20, 0.02
    jerks = rng.normal(0, 100, (K, 3))
    y0 = rng.normal(size=9)
    X, V, A = integrate_jerk(y0[:3], y0[3:6], y0[6:], jerks, dt)
    y = y0
    for k in range(K):
        j = jerks[k]
        out = solve_ivp(lambda t, s: np.concatenate([s[3:6], s[6:], j]), (0, dt), y,
                        rtol=1e-12, atol=1e-13)
        y = out.y[:, -1]
        assert np.allclose(y, np.concatenate([X[k + 1], V[k + 1], A[k + 1]]), atol=1e-10)


def _hover(K=24):
    z = np.zeros(3)
    x = np.array([0.3, 0.0, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    return CycleProblem(
        x0=x, v0=z, a0=z, t_start=0.0, cycle_time=0.4, support_count=K, k_td=K // 2,
        td_position=x, td_prediction=None, pre_td_ball_velocities=np.tile(-up, (2, 1)),
        to_position=x, td_target=x, flight_time=0.8, alpha=1.0, gravity=z, hand_normal=up)


def test_hover_cycle_is_free():
    sol = solve_cycle(_hover())
    assert sol.ok
    assert sol.cost < 1e-16
    assert max(sol.residuals.values()) < 1e-8


def test_three_ball_nominal_residuals(three_ball):
    p, sol = three_ball
    assert sol.ok
    assert max(sol.residuals.values()) < 1e-8
    assert sol.kkt_residual < 1e-8
    assert kkt_multiplier_check(p, sol) < 1e-6


def test_three_ball_cost_matches_refined_grid(three_ball):
    p, sol = three_ball
    assert refined_cost_gap(p, sol) < 0.02


def test_refined_grid_never_costs_more(three_ball):
    p, sol = three_ball
    X, V, A, dt = refined_solve(p)
    # the oracle honours the same constraints at the same physical times
    assert np.max(np.abs(X[p.k_td * 10] - p.td_position)) < 1e-8
    assert np.max(np.abs(V[-1] - p.takeoff_velocity)) < 1e-8
    assert integral_of_square(A, dt) <= sol.integral_cost() * (1 + 1e-9)


def test_tight_jerk_bound_is_infeasible():
    p = nominal_problem(PatternSpec(3), config=PlannerConfig(jerk_limit=1e-6))
    sol = solve_cycle(p)
    assert sol.status == qp.INFEASIBLE
    assert sol.infeasible_set


def test_jerk_bound_respected():
    p = nominal_problem(PatternSpec(7))
    sol = solve_cycle(p)
    assert sol.ok
    assert np.max(np.abs(sol.jerks)) <= 5000.0 * (1 + 1e-9)
    assert kkt_multiplier_check(p, sol) < 1e-6


def test_cross_product_constraints(three_ball):
    p, sol = three_ball
    for i in range(1, p.n_td + 1):
        w = p.pre_td_ball_velocities[i - 1]
        assert np.linalg.norm(np.cross(sol.velocities[p.k_td - i], w)) < 1e-8 * np.linalg.norm(w)
    for j in range(1, p.n_to + 1):
        assert np.linalg.norm(np.cross(sol.accelerations[j] - p.gravity, p.hand_normal)) < 1e-8 * 10


def test_sample_at_supports(three_ball):
    _, sol = three_ball
    for k in range(sol.support_count + 1):
        x, v, a = sample_trajectory(sol, k * sol.dt)
        assert np.allclose(x, sol.positions[k], atol=1e-12, rtol=0)
        assert np.allclose(v, sol.velocities[k], atol=1e-12, rtol=0)
        assert np.allclose(a, sol.accelerations[k], atol=1e-12, rtol=0)


def test_sample_midpoint_acceleration(three_ball):
    _, sol = three_ball
    for k in range(sol.support_count):
        _, _, a = sample_trajectory(sol, (k + 0.5) * sol.dt)
        assert np.allclose(a, 0.5 * (sol.accelerations[k] + sol.accelerations[k + 1]), atol=1e-10)


def test_sample_is_c2(three_ball):
    _, sol = three_ball
    eps = 1e-9
    jumps = []
    for k in range(1, sol.support_count):
        t = k * sol.dt
        left = sample_trajectory(sol, t - eps)
        right = sample_trajectory(sol, t + eps)
        jumps.append(max(np.max(np.abs(left[2] - right[2])) - 2 * eps * np.max(np.abs(sol.jerks)), 0))
        assert np.allclose(left[0], right[0], atol=1e-8)
    assert max(jumps) < 1e-10
    ts = np.linspace(0, sol.duration, 1001)
    X, _, _ = sample_many(sol, ts)
    assert np.allclose(X[500], sample_trajectory(sol, ts[500])[0], atol=1e-14)


def test_sample_out_of_range(three_ball):
    _, sol = three_ball
    with pytest.raises(ValueError):
        sample_trajectory(sol, -0.01)
    with pytest.raises(ValueError):
        sample_trajectory(sol, sol.duration + 0.01)


def test_take_off_round_trip(three_ball):
    p, sol = three_ball
    ball = BallState(0, sol.positions[-1], p.alpha * sol.velocities[-1])
    land = propagate(ball, p.flight_time, p.gravity).position
    assert np.max(np.abs(land - p.td_target)) < 1e-9


def test_cycle_chaining():
    spec = PatternSpec(5)
    first = solve_cycle(nominal_problem(spec, cycle=1))
    p2 = nominal_problem(spec, cycle=2)
    second = solve_cycle(p2)
    assert abs(first.times[-1] - second.times[0]) < 1e-12
    for a, b in ((first.positions, second.positions), (first.velocities, second.velocities),
                 (first.accelerations, second.accelerations)):
        assert np.max(np.abs(a[-1] - b[0])) < 1e-10


def _five_ball_parts():
    spec = PatternSpec(5)
    timing = derive_timing(spec)
    geo = compute_geometry(spec, "cascade")
    ev = generate_schedule(spec, "cascade", 1, first_cycle=1)[0].events[0]
    p = nominal_problem(spec)
    # incoming ball one tenth of a second before the plane crossing
    pred = p.td_prediction
    s = 0.1
    pos = pred.location - pred.velocity * s + 0.5 * spec.g * s * s
    vel = pred.velocity - spec.g * s
    ball = BallState(ev.incoming_ball_id, pos, vel, last_event_time=pred.time - s)
    initial = (geo.throw_stations[0], p.v0, spec.g)
    return spec, timing, ev, p, ball, initial


def _pose(spec, timing, ev, ball, initial):
    return build_problem(ev, ball, initial, PlannerConfig(),
                         t_start=ev.take_off_time - timing.cycle_time, plane_z=0.0,
                         gravity=spec.g)


def test_touch_down_index():
    spec, timing, ev, p, ball, initial = _five_ball_parts()
    q = _pose(spec, timing, ev, ball, initial)
    assert q.k_td == round((p.td_prediction.time - q.t_start) / q.dt) == 12
    assert q.k_to == 24
    assert np.allclose(q.td_position, p.td_position, atol=1e-12)


def test_late_ball_keeps_index_shifts_position():
    spec, timing, ev, p, ball, initial = _five_ball_parts()
    late = dataclasses.replace(ball, last_event_time=ball.last_event_time + 0.3 * p.dt)
    q = _pose(spec, timing, ev, late, initial)
    assert q.k_td == p.k_td
    t_snap = q.t_start + q.k_td * q.dt
    expect = propagate(late, t_snap - late.last_event_time, spec.g).position
    assert np.allclose(q.td_position, expect, atol=1e-12)
    assert q.td_position[2] > 0.0


def test_early_prediction_rejected():
    spec, timing, ev, p, ball, initial = _five_ball_parts()
    early = dataclasses.replace(ball, last_event_time=ball.last_event_time - 11 * p.dt)
    with pytest.raises(PlanningError):
        _pose(spec, timing, ev, early, initial)
    after = dataclasses.replace(ball, last_event_time=ball.last_event_time + 13 * p.dt)
    with pytest.raises(PlanningError):
        _pose(spec, timing, ev, after, initial)


def _cvxopt_qp(H, f, A, b, lb, ub):
    import cvxopt
    from cvxopt import solvers

    n = H.shape[0]
    m = cvxopt.matrix
    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    out = solvers.qp(m(H), m(f), m(np.vstack([np.eye(n), -np.eye(n)])),
                     m(np.concatenate([ub, -lb])), m(A), m(b))
    return np.array(out["x"]).ravel()


@pytest.mark.parametrize("seed", range(5))
def test_qp_matches_reference_solver(seed):
    rng = np.random.default_rng(seed)
    n, m = 12, 4
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 5
    A = rng.normal(size=(m, n))
    x_feas = rng.uniform(-0.5, 0.5, n)
    b = A @ x_feas
    lb, ub = -np.ones(n), np.ones(n)
    res = qp.solve_qp(H, f, A, b, lb, ub)
    assert res.status == qp.OPTIMAL
    ref = _cvxopt_qp(H, f, A, b, lb, ub)
    cost = lambda x: 0.5 * x @ H @ x + f @ x  # noqa: E731
    assert cost(res.x) <= cost(ref) + 1e-7 * max(1, abs(cost(ref)))
    assert np.max(np.abs(A @ res.x - b)) < 1e-9
    assert np.all(res.x >= lb - 1e-12) and np.all(res.x <= ub + 1e-12)


def test_qp_inconsistent_equalities():
    H = np.eye(2)
    res = qp.solve_qp(H, np.zeros(2), [[1, 1], [1, 1]], [0, 1], -np.ones(2), np.ones(2))
    assert res.status == qp.INFEASIBLE
