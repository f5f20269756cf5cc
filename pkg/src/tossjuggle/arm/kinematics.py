"""Hand kinematics and boundary inverse kinematics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import ArmModel


class IKError(ValueError):
    """Target outside the workspace or damped iteration did not converge."""


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    @classmethod
    def rest(cls, q):
        q = np.asarray(q, float)
        return cls(q.copy(), np.zeros_like(q), np.zeros_like(q))


def _kin(model: ArmModel, q, qd=None):
    q = np.ascontiguousarray(q, float)
    qd = np.zeros_like(q) if qd is None else np.ascontiguousarray(qd, float)
    return K.hand_kinematics(model.dh, model.base_R, model.base_p, model.tool_position, q, qd)


def forward_kinematics(model: ArmModel, q):
    """Hand position and unit hand normal ``e_hand(q)`` in world coordinates."""
    p, _, _, R = _kin(model, q)
    return p, R @ model.tool_normal


def jacobian(model: ArmModel, q):
    return _kin(model, q)[1]


def jacobian_dot(model: ArmModel, q, qd):
    return _kin(model, q, qd)[2]


def hand_state(model: ArmModel, q, qd, qdd):
    """Hand position, velocity, acceleration and normal."""
    p, J, Jd, R = _kin(model, q, qd)
    return p, J @ qd, J @ qdd + Jd @ qd, R @ model.tool_normal


def hand_state_many(model: ArmModel, Q, Qd, Qdd):
    P = np.empty((len(Q), 3))
    V = np.empty_like(P)
    A = np.empty_like(P)
    N = np.empty_like(P)
    for i in range(len(Q)):
        P[i], V[i], A[i], N[i] = hand_state(model, Q[i], Qd[i], Qdd[i])
    return P, V, A, N


def reach(model: ArmModel):
    """Upper bound on the hand distance from the base origin."""
    a, d = model.dh[:, 0], model.dh[:, 2]
    return float(np.sum(np.hypot(a, d)) + np.linalg.norm(model.tool_position))


def ik_position(model: ArmModel, x, q0=None, tol=1e-6, max_iter=200, damping=1e-3,
                posture_gain=0.1):
    """Damped least squares with a null-space pull toward the nominal posture.

    Raises
    ------
    IKError
        If ``x`` lies beyond the arm's reach or the iteration stalls.
    """
    x = np.asarray(x, float)
    dist = np.linalg.norm(x - model.base_p)
    if dist > reach(model):
        raise IKError(f"target {np.round(x, 4).tolist()} is {dist:.3f} m from the base, "
                      f"reach is {reach(model):.3f} m")
    q = np.array(model.nominal if q0 is None else q0, float)
    n = q.size
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    err = np.inf
    for it in range(max_iter):
        p, _ = forward_kinematics(model, q)
        e = x - p
        err = np.linalg.norm(e)
        if err < tol and it > 0:
            return q
        J = jacobian(model, q)
        if err < 1e-5:
            # close to the target: plain Gauss-Newton, the damped projector
            # would otherwise leak posture bias into the task space
            step = np.linalg.pinv(J) @ e
        else:
            JJt = J @ J.T + damping ** 2 * np.eye(3)
            Jp = J.T @ np.linalg.solve(JJt, np.eye(3))
            step = Jp @ e
            # posture bias acts only in the (approximate) null space
            step += (np.eye(n) - Jp @ J) @ (posture_gain * (model.nominal - q))
        lim = 0.3
        s = np.max(np.abs(step))
        if s > lim:
            step *= lim / s
        q = np.clip(q + step, lo, hi)
        if err < tol:
            return q
    raise IKError(f"position IK did not converge (error {err:.3g} m after {max_iter} iterations)")


def ik_velocity(model: ArmModel, q, xd):
    """Minimum-norm joint velocity for hand velocity ``xd``."""
    return np.linalg.pinv(jacobian(model, q)) @ np.asarray(xd, float)


BOUNDARY_TOL = 1e-10


def ik_touchdown(model: ArmModel, x_td, q0=None):
    return ik_position(model, x_td, q0, tol=BOUNDARY_TOL)


def ik_takeoff(model: ArmModel, x_to, xd_to, g=None, q0=None):
    """Joint take-off triple with hand acceleration ``g``: ``qdd = J^+ (g - Jdot qd)``."""
    g = model.gravity if g is None else np.asarray(g, float)
    q = ik_position(model, x_to, q0, tol=BOUNDARY_TOL)
    J = jacobian(model, q)
    Jp = np.linalg.pinv(J)
    qd = Jp @ np.asarray(xd_to, float)
    qdd = Jp @ (g - jacobian_dot(model, q, qd) @ qd)
    return JointState(q, qd, qdd)


def check_limits(model: ArmModel, Q, Qd=None):
    """Names of violated joint or velocity limits (post-hoc check)."""
    out = []
    Q = np.atleast_2d(Q)
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    for i in range(model.n_joints):
        if np.any(Q[:, i] < lo[i] - 1e-9) or np.any(Q[:, i] > hi[i] + 1e-9):
            out.append(f"joint{i + 1} position")
        if Qd is not None and np.any(np.abs(np.atleast_2d(Qd)[:, i]) > model.velocity_limits[i]):
            out.append(f"joint{i + 1} velocity")
    return out
