"""Hand executors used by the trial loop.

A floating hand follows its task-space plan exactly.  An arm hand tracks a
joint-space plan with a controller on the simulated arm dynamics, so its hand
state is whatever forward kinematics of the integrated joints gives.
"""
from __future__ import annotations

import numpy as np

from .. import qp
from ..arm import _kernels as K
from ..arm import kinematics as kin
from ..arm.control import ControllerSpec
from ..arm.model import ArmModel
from ..trajopt_joint import joint_problem, solve_cycle_joint
from ..trajopt_task import CycleProblem, TrajectorySolution, sample_many, solve_cycle


class PlannerFailure(RuntimeError):
    """Cycle planning failed inside a trial (reported, never raised to the caller)."""


class Divergence(RuntimeError):
    pass


class FloatingHand:
    def __init__(self, hand_id):
        self.hand_id = hand_id
        self.plan: TrajectorySolution | None = None
        self.problem: CycleProblem | None = None

    def start(self, initial, t):
        """Place the hand at ``initial = (x, v, a)`` at time ``t`` without a plan."""
        self._rest = tuple(np.asarray(z, float) for z in initial)
        self._rest_t = t

    def planned_end(self):
        if self.plan is None:
            return self._rest
        return (self.plan.positions[-1], self.plan.velocities[-1], self.plan.accelerations[-1])

    def initial_for_next(self):
        return self.planned_end()

    def solve(self, problem: CycleProblem):
        sol = solve_cycle(problem)
        if sol.status != qp.OPTIMAL:
            raise PlannerFailure(f"task QP {sol.status}: {sol.message}")
        self.plan, self.problem = sol, problem
        return sol, {"status": sol.status, "iterations": int(sol.iterations),
                     "cost": float(sol.cost), "kkt_residual": float(sol.kkt_residual)}

    def advance(self, t, record=True):
        pass

    def state(self, t):
        """Hand position, velocity and normal at ``t``."""
        if self.plan is None:
            x, v, _ = self._rest
            return x, v, None
        X, V, _ = sample_many(self.plan, [t - self.plan.t_start])
        return X[0], V[0], self.problem.hand_normal

    def window(self, t0, t1, step):
        ts = np.arange(t0, t1 + 0.5 * step, step)
        ts = ts[ts <= t1 + 1e-12]
        X, _, _ = sample_many(self.plan, ts - self.plan.t_start)
        N = np.broadcast_to(self.problem.hand_normal, X.shape)
        return ts, X, N

    def set_payload(self, held):
        pass


class ArmHand:
    """One arm tracking joint plans.

    ``model`` is the plant, ``control_model`` the (possibly perturbed) model
    inside the controller.  While ``held`` is set the plant carries a point
    payload of ``payload_mass`` at the hand point.
    """

    def __init__(self, hand_id, model: ArmModel, control_model: ArmModel,
                 controller: ControllerSpec, payload_mass=0.1, substep=5e-4):
        self.hand_id = hand_id
        self.model = model
        self.control_model = control_model
        self.controller = controller
        self._plant_free = model.arrays()
        self._plant_load = model.with_payload(payload_mass).arrays()
        self._ctrl = control_model.arrays()
        self.held = False
        self.substep = substep
        self.tick = 1.0 / controller.control_rate
        self.vmax = 10.0 * np.asarray(model.velocity_limits, float)
        self.plan: TrajectorySolution | None = None
        self.problem = None
        self.takeoff = None
        self.q_td = None
        self.q = self.qd = None
        self.t = 0.0
        self.tau = np.zeros(model.n_joints)
        self.next_tick = 0.0
        self._rec_t = []
        self._rec_q = []

    def start(self, q, qd, t):
        self.q = np.array(q, float)
        self.qd = np.array(qd, float)
        self.t = float(t)
        # ticks on a global grid
        self.next_tick = np.ceil(t / self.tick - 1e-9) * self.tick
        self._rec_t = [np.array([t])]
        self._rec_q = [self.q[None].copy()]

    def set_payload(self, held):
        self.held = bool(held)

    def planned_end(self):
        to = self.takeoff
        p, v, a, _ = kin.hand_state(self.model, to.q, to.qd, to.qdd)
        return p, v, a

    def initial_for_next(self):
        return self.planned_end()

    def solve(self, problem: CycleProblem):
        jp = joint_problem(problem, self.model, self.takeoff, self.takeoff, self.q_td)
        z0 = None
        if self.plan is not None:
            z0 = (self.plan.jerks * self.plan.dt).T.reshape(-1)
        sol = solve_cycle_joint(jp, self.model, z0=z0)
        self.plan, self.problem, self.q_td = sol, problem, jp.q_td
        self.joint_problem = jp
        return sol, {"status": sol.status, "iterations": int(sol.iterations),
                     "cost": float(sol.cost), "kkt_residual": float(sol.kkt_residual)}

    def advance(self, t_end, record=True):
        if t_end <= self.t + 1e-12:
            return
        P = self.plan
        plan = (P.positions, P.velocities, P.accelerations, P.jerks)
        q, qd, t, tau, nt, div, ts, qs, _ = K.advance(
            self._plant_load if self.held else self._plant_free, self._ctrl,
            self.model.gravity, self.controller.code, self.controller.kp, self.controller.kd,
            plan, P.t_start, P.dt, self.q, self.qd, self.t, t_end, self.tick, self.tau,
            self.next_tick, self.substep, self.vmax, record)
        self.q, self.qd, self.t, self.tau, self.next_tick = q, qd, t, tau, nt
        if record and len(ts):
            self._rec_t.append(ts)
            self._rec_q.append(qs)
        if div:
            raise Divergence(f"arm {self.hand_id} joint speed beyond 10x limit at t={t:.4f} s")

    def trim(self, t0):
        """Drop recorded samples before ``t0``."""
        ts = np.concatenate(self._rec_t)
        qs = np.concatenate(self._rec_q)
        keep = ts >= t0 - 1e-12
        self._rec_t, self._rec_q = [ts[keep]], [qs[keep]]

    def state(self, t=None):
        p, v, _, n = kin.hand_state(self.model, self.q, self.qd, np.zeros_like(self.q))
        return p, v, n

    def window(self, t0, t1, step=None):
        ts = np.concatenate(self._rec_t)
        qs = np.concatenate(self._rec_q)
        sel = (ts >= t0 - 1e-12) & (ts <= t1 + 1e-12)
        ts, qs = ts[sel], qs[sel]
        X = np.empty((len(ts), 3))
        N = np.empty((len(ts), 3))
        for i, q in enumerate(qs):
            X[i], N[i] = kin.forward_kinematics(self.model, q)
        return ts, X, N
