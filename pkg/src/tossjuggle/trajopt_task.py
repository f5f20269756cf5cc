"""Per-cycle hand trajectory optimisation with piece-wise constant jerk.

A cycle starts at the previous take-off and ends at the next one.  The
optimiser chooses ``K`` constant jerks and minimises the summed squared
accelerations at the ``K + 1`` support points subject to

* the initial state (previous take-off),
* hand position equal to the predicted ball position at the touch-down index,
* take-off position, velocity (aimed throw) and acceleration equal to ``g``,
* hand velocity parallel to ball velocity on ``n_td`` points before touch-down,
* ``(acc - g)`` parallel to the hand normal on ``n_to`` points after the start,
* per-axis jerk bounds.

States are affine in the jerks, so each cycle is a convex QP.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .ballistics import BallState, TouchDownPrediction, predict_touchdown, takeoff_velocity

OPTIMAL = qp.OPTIMAL
INFEASIBLE = qp.INFEASIBLE


class PlanningError(ValueError):
    """The cycle cannot be posed, e.g. because touch-down falls outside the window."""


@dataclass(frozen=True)
class PlannerConfig:
    support_count: int = 24
    n_to: int = 2
    n_td: int = 2
    jerk_limit: float = 5000.0
    normal_cap_deg: float = 15.0


@dataclass
class CycleProblem:
    x0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    t_start: float
    cycle_time: float
    support_count: int
    k_td: int
    td_position: np.ndarray             # ball position at the snapped touch-down time
    td_prediction: TouchDownPrediction
    pre_td_ball_velocities: np.ndarray  # row i-1 holds the ball velocity at k_td - i
    to_position: np.ndarray
    td_target: np.ndarray
    flight_time: float
    alpha: float
    gravity: np.ndarray
    hand_normal: np.ndarray
    n_to: int = 2
    n_td: int = 2
    jerk_limit: np.ndarray = field(default_factory=lambda: np.full(3, 5000.0))

    @property
    def dt(self):
        return self.cycle_time / self.support_count

    @property
    def k_to(self):
        return self.support_count

    @property
    def takeoff_velocity(self):
        return takeoff_velocity(self.to_position, self.td_target, self.flight_time,
                                self.alpha, self.gravity)

    def validate(self):
        K = self.support_count
        if not 0 < self.k_td < K:
            raise PlanningError(f"touch-down index {self.k_td} outside (0, {K})")
        if self.n_to > self.k_td - 1 or self.k_td - self.n_td < 1:
            raise PlanningError(
                f"touch-down index {self.k_td} leaves no room for n_to={self.n_to}, n_td={self.n_td}")
        n = np.linalg.norm(self.hand_normal)
        if abs(n - 1.0) > 1e-9:
            raise PlanningError("hand normal must be a unit vector")


@dataclass
class TrajectorySolution:
    jerks: np.ndarray          # (K, dim)
    positions: np.ndarray      # (K + 1, dim)
    velocities: np.ndarray
    accelerations: np.ndarray
    dt: float
    t_start: float
    cost: float
    status: str
    residuals: dict = field(default_factory=dict)
    kkt_residual: float = np.inf
    message: str = ""
    infeasible_set: list = field(default_factory=list)
    iterations: int = 0

    @property
    def support_count(self):
        return self.jerks.shape[0]

    @property
    def duration(self):
        return self.dt * self.support_count

    @property
    def times(self):
        return self.t_start + self.dt * np.arange(self.support_count + 1)

    @property
    def ok(self):
        return self.status == OPTIMAL

    def integral_cost(self):
        """Exact time integral of squared (piece-wise linear) acceleration."""
        a = self.accelerations
        s = np.sum(a[:-1] ** 2 + a[:-1] * a[1:] + a[1:] ** 2)
        return float(self.dt * s / 3.0)

    def state_at(self, t):
        return sample_trajectory(self, t - self.t_start)


def integrate_jerk(x0, v0, a0, jerks, dt):
    """Exact integration of piece-wise constant jerk.

    Returns positions, velocities and accelerations at the ``K + 1`` support
    points (arrays of shape ``(K + 1, dim)``).
    """
    jerks = np.atleast_2d(np.asarray(jerks, float))
    x = np.array(x0, float).reshape(-1)
    v = np.array(v0, float).reshape(-1)
    a = np.array(a0, float).reshape(-1)
    K = jerks.shape[0]
    X = np.empty((K + 1, x.size))
    V = np.empty_like(X)
    A = np.empty_like(X)
    X[0], V[0], A[0] = x, v, a
    h2, h3 = dt * dt / 2.0, dt ** 3 / 6.0
    for k in range(K):
        j = jerks[k]
        x = x + v * dt + a * h2 + j * h3
        v = v + a * dt + j * h2
        a = a + j * dt
        X[k + 1], V[k + 1], A[k + 1] = x, v, a
    return X, V, A


def sample_trajectory(solution: TrajectorySolution, t):
    """Position, velocity and acceleration at time ``t`` after the cycle start."""
    T = solution.duration
    if t < -1e-12 or t > T + 1e-12:
        raise ValueError(f"t={t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    k = min(int(t // solution.dt), solution.support_count - 1)
    tau = t - k * solution.dt
    x, v, a = solution.positions[k], solution.velocities[k], solution.accelerations[k]
    j = solution.jerks[k]
    return (x + v * tau + a * tau * tau / 2.0 + j * tau ** 3 / 6.0,
            v + a * tau + j * tau * tau / 2.0,
            a + j * tau)


def sample_many(solution: TrajectorySolution, ts):
    """Vectorised :func:`sample_trajectory` for an array of offsets."""
    ts = np.clip(np.asarray(ts, float), 0.0, solution.duration)
    k = np.minimum((ts // solution.dt).astype(int), solution.support_count - 1)
    tau = (ts - k * solution.dt)[:, None]
    x, v, a = solution.positions[k], solution.velocities[k], solution.accelerations[k]
    j = solution.jerks[k]
    return (x + v * tau + a * tau ** 2 / 2.0 + j * tau ** 3 / 6.0,
            v + a * tau + j * tau ** 2 / 2.0,
            a + j * tau)


def jerk_maps(K, dt):
    """Scalar affine maps from one axis' jerks to the support-point states.

    Returns ``(P, V, A)`` with shape ``(K + 1, K)``: the state at support ``k``
    is ``free_response[k] + M[k] @ jerks``.
    """
    P = np.zeros((K + 1, K))
    V = np.zeros((K + 1, K))
    A = np.zeros((K + 1, K))
    for k in range(1, K + 1):
        for i in range(k):
            n = k - 1 - i  # full steps after interval i
            A[k, i] = dt
            V[k, i] = dt * dt / 2.0 + n * dt * dt
            P[k, i] = dt ** 3 / 6.0 + n * dt ** 3 / 2.0 + n * n * dt ** 3 / 2.0
    return P, V, A


def free_response(x0, v0, a0, K, dt):
    t = dt * np.arange(K + 1)[:, None]
    x0, v0, a0 = (np.asarray(z, float).reshape(1, -1) for z in (x0, v0, a0))
    return x0 + v0 * t + a0 * t * t / 2.0, v0 + a0 * t, np.repeat(a0, K + 1, axis=0)


def cross_rows(w):
    """Rows ``C`` with ``C @ v == (v x w)`` minus the dependent row.

    ``(v x w) . w == 0`` always, so the component along the largest entry of
    ``w`` is implied by the other two.
    """
    w = np.asarray(w, float)
    C = np.array([[0.0, w[2], -w[1]],
                  [-w[2], 0.0, w[0]],
                  [w[1], -w[0], 0.0]])
    drop = int(np.argmax(np.abs(w)))
    return np.delete(C, drop, axis=0)


def snap_index(t_td, t_start, dt):
    return int(round((t_td - t_start) / dt))


def build_problem(event, ball: BallState, initial, config: PlannerConfig, *, t_start,
                  plane_z, gravity, alpha=1.0, hand_normal=None) -> CycleProblem:
    """Pose the cycle that starts at ``t_start`` and ends at ``event.take_off_time``.

    ``ball`` is the incoming ball's current state (``last_event_time`` is its
    clock), ``initial`` the hand's ``(x, v, a)`` at ``t_start``.

    Raises
    ------
    PlanningError
        If the predicted touch-down snaps before the earliest admissible index
        or after the cycle end.
    """
    g = np.asarray(gravity, float)
    K = config.support_count
    T_c = event.take_off_time - t_start
    if T_c <= 0:
        raise PlanningError("take-off must follow the cycle start")
    dt = T_c / K
    pred = predict_touchdown(ball, plane_z, g)
    k_td = snap_index(pred.time, t_start, dt)
    k_min = max(config.n_to + 1, config.n_td + 1)
    if k_td < k_min:
        raise PlanningError(
            f"touch-down at t={pred.time:.4f} snaps to index {k_td} < minimum {k_min}")
    if k_td >= K:
        raise PlanningError(f"touch-down at t={pred.time:.4f} snaps to index {k_td} >= {K}")
    t_snap = t_start + k_td * dt

    def ball_at(t):
        s = t - ball.last_event_time
        return ball.position + ball.velocity * s + 0.5 * g * s * s, ball.velocity + g * s

    td_pos, _ = ball_at(t_snap)
    pre_v = np.array([ball_at(t_start + (k_td - i) * dt)[1]
                      for i in range(1, config.n_td + 1)]).reshape(-1, 3)
    if hand_normal is None:
        hand_normal = -pred.velocity / np.linalg.norm(pred.velocity)
    hand_normal = np.asarray(hand_normal, float)
    hand_normal = hand_normal / np.linalg.norm(hand_normal)
    cosang = -float(hand_normal @ pred.velocity) / np.linalg.norm(pred.velocity)
    ang = math.degrees(math.acos(min(1.0, max(-1.0, cosang))))
    if ang > config.normal_cap_deg:
        raise PlanningError(
            f"hand normal is {ang:.1f} deg from the incoming ball direction "
            f"(cap {config.normal_cap_deg} deg)")
    x0, v0, a0 = (np.asarray(z, float) for z in initial)
    return CycleProblem(
        x0=x0, v0=v0, a0=a0, t_start=t_start, cycle_time=T_c, support_count=K,
        k_td=k_td, td_position=td_pos, td_prediction=pred, pre_td_ball_velocities=pre_v,
        to_position=np.asarray(event.take_off_location, float),
        td_target=np.asarray(event.target_touch_down_location, float),
        flight_time=event.flight_time, alpha=alpha, gravity=g, hand_normal=hand_normal,
        n_to=config.n_to, n_td=config.n_td,
        jerk_limit=np.broadcast_to(np.asarray(config.jerk_limit, float), (3,)).copy(),
    )


def nominal_problem(spec, kind=None, hand=0, cycle=1, config: PlannerConfig | None = None):
    """Steady-state cycle of ``hand``: starts at the nominal take-off triple and
    catches the ball of the nominal schedule.
    """
    from .pattern import compute_geometry, derive_timing, generate_schedule

    kind = kind or spec.default_kind()
    config = config or PlannerConfig()
    g = spec.g
    timing = derive_timing(spec, kind)
    geo = compute_geometry(spec, kind)
    sched = generate_schedule(spec, kind, 1, first_cycle=cycle)
    ev = sched[hand].events[0]
    thrower = 1 - hand if kind == "cascade" else hand
    src = geo.throw_stations[thrower]
    t_throw = ev.touch_down_time - timing.flight_time
    v_ball = spec.alpha * takeoff_velocity(src, geo.catch_stations[hand], timing.flight_time,
                                           spec.alpha, g)
    ball = BallState(ev.incoming_ball_id, np.array(src, float), v_ball, last_event_time=t_throw)
    x0 = geo.throw_stations[hand]
    v0 = takeoff_velocity(x0, ev.target_touch_down_location, timing.flight_time, spec.alpha, g)
    return build_problem(ev, ball, (x0, v0, g), config,
                         t_start=ev.take_off_time - timing.cycle_time,
                         plane_z=spec.catch_plane_height, gravity=g, alpha=spec.alpha)


def _assemble(problem: CycleProblem):
    """Cost and constraints in the scaled variable ``z = jerk * dt``.

    Variables are ordered axis-major: ``[z_x(0..K-1), z_y(...), z_z(...)]``.
    """
    K, dt, d = problem.support_count, problem.dt, 3
    P, V, A = (M / dt for M in jerk_maps(K, dt))
    Xf, Vf, Af = free_response(problem.x0, problem.v0, problem.a0, K, dt)
    n = d * K

    def block(M_row, axis_weights):
        row = np.zeros(n)
        for ax in range(d):
            row[ax * K:(ax + 1) * K] = axis_weights[ax] * M_row
        return row

    H = np.zeros((n, n))
    f = np.zeros(n)
    AtA = A.T @ A
    for ax in range(d):
        sl = slice(ax * K, (ax + 1) * K)
        H[sl, sl] = 2.0 * AtA
        f[sl] = 2.0 * A.T @ Af[:, ax]

    rows, rhs, tags = [], [], []

    def add_vec(M, free, k, target, tag):
        for ax in range(d):
            e = np.zeros(d)
            e[ax] = 1.0
            rows.append(block(M[k], e))
            rhs.append(target[ax] - free[k, ax])
            tags.append(tag)

    g = problem.gravity
    k_td, k_to = problem.k_td, problem.k_to
    add_vec(P, Xf, k_td, problem.td_position, "td_position")
    add_vec(P, Xf, k_to, problem.to_position, "to_position")
    add_vec(V, Vf, k_to, problem.takeoff_velocity, "to_velocity")
    add_vec(A, Af, k_to, g, "to_acceleration")
    for i in range(1, problem.n_td + 1):
        k = k_td - i
        for c in cross_rows(problem.pre_td_ball_velocities[i - 1]):
            rows.append(block(V[k], c))
            rhs.append(-float(c @ Vf[k]))
            tags.append("pre_td_collinear")
    for j in range(1, problem.n_to + 1):
        for c in cross_rows(problem.hand_normal):
            rows.append(block(A[j], c))
            rhs.append(-float(c @ (Af[j] - g)))
            tags.append("post_to_collinear")
    Aeq = np.array(rows)
    beq = np.array(rhs)
    scale = np.max(np.abs(Aeq), axis=1)
    scale[scale == 0] = 1.0
    Aeq /= scale[:, None]
    beq /= scale
    zmax = np.repeat(problem.jerk_limit * dt, K)
    return H, f, Aeq, beq, -zmax, zmax, tags


def constraint_residuals(problem: CycleProblem, X, V, A):
    g = problem.gravity
    k_td, k_to = problem.k_td, problem.k_to
    res = {
        "initial_state": float(max(np.max(np.abs(X[0] - problem.x0)),
                                   np.max(np.abs(V[0] - problem.v0)),
                                   np.max(np.abs(A[0] - problem.a0)))),
        "td_position": float(np.max(np.abs(X[k_td] - problem.td_position))),
        "to_position": float(np.max(np.abs(X[k_to] - problem.to_position))),
        "to_velocity": float(np.max(np.abs(V[k_to] - problem.takeoff_velocity))),
        "to_acceleration": float(np.max(np.abs(A[k_to] - g))),
        "pre_td_collinear": 0.0,
        "post_to_collinear": 0.0,
    }
    for i in range(1, problem.n_td + 1):
        w = problem.pre_td_ball_velocities[i - 1]
        c = np.cross(V[k_td - i], w) / np.linalg.norm(w)
        res["pre_td_collinear"] = max(res["pre_td_collinear"], float(np.max(np.abs(c))))
    for j in range(1, problem.n_to + 1):
        c = np.cross(A[j] - g, problem.hand_normal)
        res["post_to_collinear"] = max(res["post_to_collinear"], float(np.max(np.abs(c))))
    return res


def solve_cycle(problem: CycleProblem) -> TrajectorySolution:
    problem.validate()
    K, dt = problem.support_count, problem.dt
    H, f, Aeq, beq, lb, ub, tags = _assemble(problem)
    out = qp.solve_qp(H, f, Aeq, beq, lb, ub)
    z = out.x.reshape(3, K).T
    jerks = z / dt
    X, V, A = integrate_jerk(problem.x0, problem.v0, problem.a0, jerks, dt)
    sol = TrajectorySolution(
        jerks=jerks, positions=X, velocities=V, accelerations=A, dt=dt,
        t_start=problem.t_start, cost=float(np.sum(A * A)), status=out.status,
        residuals=constraint_residuals(problem, X, V, A), kkt_residual=out.kkt_residual,
        message=out.message, iterations=out.iterations,
    )
    if out.status == INFEASIBLE:
        sol.infeasible_set = [f"jerk[{i % K}, axis {i // K}]" for i in out.infeasible_set]
    return sol


def kkt_multiplier_check(problem: CycleProblem, solution: TrajectorySolution, tol=1e-9):
    """Least-squares multiplier fit of the cost gradient onto active constraints.

    Independent of the solver's own multipliers: returns the relative norm of
    the part of the gradient outside the span of equality rows and active
    bound normals (zero at a KKT point).
    """
    dt = problem.dt
    H, f, Aeq, beq, lb, ub, _ = _assemble(problem)
    z = (solution.jerks * dt).T.reshape(-1)
    grad = H @ z + f
    active = np.flatnonzero((np.abs(z - lb) <= tol * (ub - lb)) | (np.abs(ub - z) <= tol * (ub - lb)))
    G = np.vstack([Aeq, np.eye(z.size)[active]]) if active.size else Aeq
    lam, *_ = np.linalg.lstsq(G.T, -grad, rcond=None)
    r = grad + G.T @ lam
    # bound multipliers must push outward: lower bound needs grad_i >= 0 component
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(grad)))


SOLUTION_HEADER = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "jx", "jy", "jz"]


def solution_rows(solution: TrajectorySolution):
    J = np.vstack([solution.jerks, solution.jerks[-1:]])
    for k, t in enumerate(solution.times):
        yield [t, *solution.positions[k], *solution.velocities[k],
               *solution.accelerations[k], *J[k]]


def write_solution_csv(solution: TrajectorySolution, fh, header=SOLUTION_HEADER):
    """Write support-point states; the last row repeats the final jerk."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in solution_rows(solution):
        w.writerow([repr(float(v)) for v in row])


def solution_csv(solution, header=SOLUTION_HEADER):
    buf = io.StringIO()
    write_solution_csv(solution, buf, header)
    return buf.getvalue()
