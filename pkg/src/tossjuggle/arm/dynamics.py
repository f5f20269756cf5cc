"""Rigid-body dynamics of the serial arm (recursive Newton-Euler)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .kinematics import JointState
from .model import ArmModel


class DivergenceError(RuntimeError):
    """Joint velocities left the admissible envelope during integration."""


def _f(x):
    return np.ascontiguousarray(x, float)


def inverse_dynamics(model: ArmModel, q, qd, qdd):
    """``tau = M(q) qdd + c(q, qd) + g(q)``."""
    return K.rne(*model.arrays(), _f(q), _f(qd), _f(qdd), model.gravity)


def gravity_torque(model: ArmModel, q):
    z = np.zeros(model.n_joints)
    return inverse_dynamics(model, q, z, z)


def coriolis_torque(model: ArmModel, q, qd):
    z = np.zeros(model.n_joints)
    return K.rne(*model.arrays(), _f(q), _f(qd), z, np.zeros(3))


def mass_matrix(model: ArmModel, q):
    """Inertia matrix from unit-acceleration columns of the RNE."""
    return K.mass_matrix(*model.arrays(), _f(q))


def forward_dynamics(model: ArmModel, q, qd, tau):
    return K.forward_dynamics(*model.arrays(), _f(q), _f(qd), _f(tau), model.gravity)


def kinetic_energy(model: ArmModel, q, qd):
    qd = _f(qd)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def potential_energy(model: ArmModel, q):
    """``-sum m_i g . c_i`` over link centres of mass."""
    n = model.n_joints
    R = np.empty((n + 1, 3, 3))
    o = np.empty((n + 1, 3))
    K.frames(model.dh, model.base_R, model.base_p, _f(q), R, o)
    c = o[1:] + np.einsum("nij,nj->ni", R[1:], model.coms)
    return float(-np.sum(model.masses * (c @ model.gravity)))


@dataclass
class ArmTrajectory:
    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray


def simulate_arm_dynamics(model: ArmModel, torques, initial: JointState, control_rate=500.0,
                          inner_rate=2000.0) -> ArmTrajectory:
    """Integrate a torque stream held constant over each control period.

    ``torques`` has one row per control tick; the returned trajectory holds the
    state at every tick boundary (``len(torques) + 1`` rows).

    Raises
    ------
    DivergenceError
        If any joint speed exceeds ten times its velocity limit.
    """
    taus = np.atleast_2d(_f(torques))
    tick = 1.0 / control_rate
    Q, Qd = K.advance_open_loop(model.arrays(), model.gravity, _f(initial.q), _f(initial.qd),
                                taus, tick, 1.0 / inner_rate)
    bad = ~np.isfinite(Qd).all(axis=1) | np.any(np.abs(Qd) > 10 * model.velocity_limits, axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise DivergenceError(f"joint velocity beyond 10x limit at t={k * tick:.4f} s")
    return ArmTrajectory(tick * np.arange(len(taus) + 1), Q, Qd)
