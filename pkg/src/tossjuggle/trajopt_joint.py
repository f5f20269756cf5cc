"""Per-cycle joint-space trajectory optimisation.

Same jerk parameterisation and cost as the task-space planner, in joint
coordinates.  Boundary states come from inverse kinematics and enter as linear
equalities; the collinearity constraints depend on the hand kinematics and are
handled by sequential quadratic programming with Gauss-Newton linearisation.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .arm import kinematics as kin
from .arm.kinematics import JointState
from .arm.model import ArmModel
from .trajopt_task import (CycleProblem, PlanningError, TrajectorySolution, free_response,
                           integrate_jerk, jerk_maps)

SQP_ITERATIONS = 50
RESIDUAL_TOL = 1e-6
STEP_TOL = 1e-8


class SQPError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class JointCycleProblem:
    initial: JointState
    t_start: float
    cycle_time: float
    support_count: int
    k_td: int
    q_td: np.ndarray
    takeoff: JointState
    pre_td_ball_velocities: np.ndarray   # row i-1 at k_td - i
    gravity: np.ndarray
    jerk_limits: np.ndarray
    n_to: int = 2
    n_td: int = 2
    task: CycleProblem | None = field(default=None, repr=False)

    @property
    def dt(self):
        return self.cycle_time / self.support_count

    @property
    def k_to(self):
        return self.support_count

    @property
    def n_joints(self):
        return self.q_td.size

    def validate(self):
        K = self.support_count
        if not 0 < self.k_td < K:
            raise PlanningError(f"touch-down index {self.k_td} outside (0, {K})")
        if self.n_to > self.k_td - 1 or self.k_td - self.n_td < 1:
            raise PlanningError(
                f"touch-down index {self.k_td} leaves no room for n_to={self.n_to}, n_td={self.n_td}")


def joint_problem(task: CycleProblem, model: ArmModel, initial: JointState,
                  takeoff: JointState | None = None, q_td_seed=None) -> JointCycleProblem:
    """Lift a task-space cycle to joint space by boundary inverse kinematics.

    ``takeoff`` may be supplied when the take-off triple is already known (it
    only depends on the fixed throw station and aim, so callers cache it).

    Raises
    ------
    IKError
        If a boundary target cannot be reached.
    """
    if takeoff is None:
        takeoff = kin.ik_takeoff(model, task.to_position, task.takeoff_velocity, task.gravity)
    q_td = kin.ik_touchdown(model, task.td_position, q_td_seed)
    return JointCycleProblem(
        initial=initial, t_start=task.t_start, cycle_time=task.cycle_time,
        support_count=task.support_count, k_td=task.k_td, q_td=q_td, takeoff=takeoff,
        pre_td_ball_velocities=task.pre_td_ball_velocities, gravity=task.gravity,
        jerk_limits=np.asarray(model.jerk_limits, float), n_to=task.n_to, n_td=task.n_td,
        task=task,
    )


def nominal_joint_problem(task: CycleProblem, model: ArmModel) -> JointCycleProblem:
    """Joint version of a steady-state cycle: it starts and ends at the take-off triple."""
    to = kin.ik_takeoff(model, task.to_position, task.takeoff_velocity, task.gravity)
    return joint_problem(task, model, to, to)


class _Maps:
    """Affine maps from scaled jerks ``z`` (joint-major) to support states."""

    def __init__(self, problem: JointCycleProblem):
        K, dt, n = problem.support_count, problem.dt, problem.n_joints
        self.K, self.n = K, n
        self.P, self.V, self.A = (M / dt for M in jerk_maps(K, dt))
        ini = problem.initial
        self.Qf, self.Vf, self.Af = free_response(ini.q, ini.qd, ini.qdd, K, dt)

    def rows(self, M, k):
        """``(n, n K)`` block mapping ``z`` to the joint vector of ``M`` at ``k``."""
        out = np.zeros((self.n, self.n * self.K))
        for j in range(self.n):
            out[j, j * self.K:(j + 1) * self.K] = M[k]
        return out

    def states(self, z):
        Z = z.reshape(self.n, self.K).T
        return self.Qf + self.P @ Z, self.Vf + self.V @ Z, self.Af + self.A @ Z


def _cross(a, b):
    # np.cross carries a lot of overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _pre_td(model, q, qd, w):
    _, v, _, _ = kin.hand_state(model, q, qd, np.zeros_like(q))
    return _cross(v, w)


def _post_to(model, q, qd, qdd, g):
    _, _, a, e = kin.hand_state(model, q, qd, qdd)
    return _cross(a - g, e)


def _fd(fun, x, h=1e-5):
    f0 = fun(x)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        J[:, i] = (fun(x + e) - fun(x - e)) / (2.0 * e[i])
    return f0, J


def _kinematic_terms(problem, model, maps, z):
    """Residuals ``c(z)`` and Jacobians ``dc/dz`` of the collinearity rows.

    Each cross product keeps the two components not implied by the reference
    vector (ball velocity, or the current hand normal).
    """
    n = problem.n_joints
    Q, Qd, Qdd = maps.states(z)
    res, jac, tags = [], [], []
    for i in range(1, problem.n_td + 1):
        k = problem.k_td - i
        w = problem.pre_td_ball_velocities[i - 1]
        keep = np.delete(np.arange(3), int(np.argmax(np.abs(w))))
        x = np.concatenate([Q[k], Qd[k]])
        c, G = _fd(lambda s: _pre_td(model, s[:n], s[n:], w), x)
        D = np.vstack([maps.rows(maps.P, k), maps.rows(maps.V, k)])
        scale = np.linalg.norm(w)
        res.append(c[keep] / scale)
        jac.append(G[keep] @ D / scale)
        tags += ["pre_td_collinear"] * 2
    g = problem.gravity
    gs = max(float(np.linalg.norm(g)), 1.0)
    for j in range(1, problem.n_to + 1):
        _, e = kin.forward_kinematics(model, Q[j])
        keep = np.delete(np.arange(3), int(np.argmax(np.abs(e))))
        x = np.concatenate([Q[j], Qd[j], Qdd[j]])
        c, G = _fd(lambda s: _post_to(model, s[:n], s[n:2 * n], s[2 * n:], g), x)
        D = np.vstack([maps.rows(maps.P, j), maps.rows(maps.V, j), maps.rows(maps.A, j)])
        res.append(c[keep] / gs)
        jac.append(G[keep] @ D / gs)
        tags += ["post_to_collinear"] * 2
    if not res:
        m = maps.n * maps.K
        return np.zeros(0), np.zeros((0, m)), []
    return np.concatenate(res), np.vstack(jac), tags


def _linear_terms(problem, maps):
    rows, rhs = [], []
    for M, free, k, target in ((maps.P, maps.Qf, problem.k_td, problem.q_td),
                               (maps.P, maps.Qf, problem.k_to, problem.takeoff.q),
                               (maps.V, maps.Vf, problem.k_to, problem.takeoff.qd),
                               (maps.A, maps.Af, problem.k_to, problem.takeoff.qdd)):
        rows.append(maps.rows(M, k))
        rhs.append(np.asarray(target, float) - free[k])
    return np.vstack(rows), np.concatenate(rhs)


def _cost(maps):
    n, K = maps.n, maps.K
    H = np.zeros((n * K, n * K))
    f = np.zeros(n * K)
    AtA = maps.A.T @ maps.A
    for j in range(n):
        sl = slice(j * K, (j + 1) * K)
        H[sl, sl] = 2.0 * AtA
        f[sl] = 2.0 * maps.A.T @ maps.Af[:, j]
    return H, f


def joint_residuals(problem: JointCycleProblem, model: ArmModel, Q, Qd, Qdd):
    """Boundary and collinearity residuals of a joint trajectory."""
    ini, to = problem.initial, problem.takeoff
    k_td, k_to = problem.k_td, problem.k_to
    res = {
        "initial_state": float(max(np.max(np.abs(Q[0] - ini.q)), np.max(np.abs(Qd[0] - ini.qd)),
                                   np.max(np.abs(Qdd[0] - ini.qdd)))),
        "td_position": float(np.max(np.abs(Q[k_td] - problem.q_td))),
        "to_position": float(np.max(np.abs(Q[k_to] - to.q))),
        "to_velocity": float(np.max(np.abs(Qd[k_to] - to.qd))),
        "to_acceleration": float(np.max(np.abs(Qdd[k_to] - to.qdd))),
        "pre_td_collinear": 0.0,
        "post_to_collinear": 0.0,
    }
    for i in range(1, problem.n_td + 1):
        w = problem.pre_td_ball_velocities[i - 1]
        c = _pre_td(model, Q[k_td - i], Qd[k_td - i], w) / np.linalg.norm(w)
        res["pre_td_collinear"] = max(res["pre_td_collinear"], float(np.max(np.abs(c))))
    for j in range(1, problem.n_to + 1):
        c = _post_to(model, Q[j], Qd[j], Qdd[j], problem.gravity)
        res["post_to_collinear"] = max(res["post_to_collinear"], float(np.max(np.abs(c))))
    return res


def solve_cycle_joint(problem: JointCycleProblem, model: ArmModel, max_iter=SQP_ITERATIONS,
                      z0=None) -> TrajectorySolution:
    """Sequential QP on the linearised collinearity constraints.

    The first iterate minimises the cost under the linear boundary equalities
    alone (joint interpolation of the boundary states).  The returned solution
    has joint arrays in ``positions`` etc. and the SQP history in ``residuals``
    under ``"history"``; ``status`` is ``"optimal"`` on convergence.

    Raises
    ------
    SQPError
        If the iteration cap is reached or a subproblem is infeasible; the
        exception carries the residual history.
    """
    problem.validate()
    maps = _Maps(problem)
    K, dt, n = problem.support_count, problem.dt, problem.n_joints
    H, f = _cost(maps)
    Al, bl = _linear_terms(problem, maps)
    zmax = np.repeat(problem.jerk_limits * dt, K)
    lb, ub = -zmax, zmax
    if z0 is None:
        first = qp.solve_qp(H, f, Al, bl, lb, ub)
        if first.status != qp.OPTIMAL:
            raise SQPError(f"boundary interpolation failed: {first.status} {first.message}", [])
        z = first.x
    else:
        z = np.asarray(z0, float)
    history = []
    out = None
    for it in range(1, max_iter + 1):
        c, G, _ = _kinematic_terms(problem, model, maps, z)
        A = np.vstack([Al, G])
        b = np.concatenate([bl, G @ z - c])
        # row scaling keeps the equality block well conditioned
        s = np.max(np.abs(A), axis=1)
        s[s == 0] = 1.0
        out = qp.solve_qp(H, f, A / s[:, None], b / s, lb, ub)
        if out.status != qp.OPTIMAL:
            raise SQPError(f"SQP subproblem {out.status} at iteration {it}: {out.message}", history)
        step = float(np.max(np.abs(out.x - z)))
        z = out.x
        c_new, _, _ = _kinematic_terms(problem, model, maps, z)
        lin = float(np.max(np.abs(Al @ z - bl))) if bl.size else 0.0
        r = max(float(np.max(np.abs(c_new))) if c_new.size else 0.0, lin)
        history.append((r, step))
        # the step test is relative: finite-difference Jacobians leave a noise
        # floor of about 1e-8 of the variable magnitude
        if r < RESIDUAL_TOL and step < STEP_TOL * max(1.0, float(np.max(np.abs(z)))):
            break
        if r < 1e-12 and c_new.size == 0:
            break
    else:
        raise SQPError(f"SQP did not converge in {max_iter} iterations "
                       f"(residual {history[-1][0]:.3g}, step {history[-1][1]:.3g})", history)
    jerks = z.reshape(n, K).T / dt
    ini = problem.initial
    Q, Qd, Qdd = integrate_jerk(ini.q, ini.qd, ini.qdd, jerks, dt)
    res = joint_residuals(problem, model, Q, Qd, Qdd)
    res["history"] = history
    sol = TrajectorySolution(
        jerks=jerks, positions=Q, velocities=Qd, accelerations=Qdd, dt=dt,
        t_start=problem.t_start, cost=float(np.sum(Qdd * Qdd)), status=qp.OPTIMAL,
        residuals=res, kkt_residual=out.kkt_residual, iterations=len(history),
    )
    return sol


def verify_task_constraints(problem: JointCycleProblem, model: ArmModel,
                            solution: TrajectorySolution):
    """Residuals of the task-space juggling constraints after forward kinematics.

    Requires ``problem.task``.  Keys mirror the task-space residuals.
    """
    task = problem.task
    if task is None:
        raise ValueError("problem has no task-space counterpart")
    P, V, A, N = kin.hand_state_many(model, solution.positions, solution.velocities,
                                     solution.accelerations)
    g = task.gravity
    k_td, k_to = task.k_td, task.k_to
    out = {
        "td_position": float(np.max(np.abs(P[k_td] - task.td_position))),
        "to_position": float(np.max(np.abs(P[k_to] - task.to_position))),
        "to_velocity": float(np.max(np.abs(V[k_to] - task.takeoff_velocity))),
        "to_acceleration": float(np.max(np.abs(A[k_to] - g))),
        "pre_td_collinear": 0.0,
        "post_to_collinear": 0.0,
    }
    for i in range(1, task.n_td + 1):
        w = task.pre_td_ball_velocities[i - 1]
        out["pre_td_collinear"] = max(out["pre_td_collinear"], float(
            np.max(np.abs(np.cross(V[k_td - i], w))) / np.linalg.norm(w)))
    for j in range(1, task.n_to + 1):
        out["post_to_collinear"] = max(out["post_to_collinear"], float(
            np.max(np.abs(np.cross(A[j] - g, N[j])))))
    return out


def joint_header(n):
    cols = ["t"]
    for name in ("q", "qd", "qdd", "qddd"):
        cols += [f"{name}{i + 1}" for i in range(n)]
    return cols


def write_joint_csv(solution: TrajectorySolution, fh):
    """Support-point joint states; the last row repeats the final jerk."""
    n = solution.positions.shape[1]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(joint_header(n))
    J = np.vstack([solution.jerks, solution.jerks[-1:]])
    for k, t in enumerate(solution.times):
        row = [t, *solution.positions[k], *solution.velocities[k],
               *solution.accelerations[k], *J[k]]
        w.writerow([repr(float(v)) for v in row])


def joint_csv(solution):
    buf = io.StringIO()
    write_joint_csv(solution, buf)
    return buf.getvalue()
