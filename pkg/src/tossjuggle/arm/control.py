"""Joint-space tracking controllers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .dynamics import mass_matrix
from .kinematics import JointState
from .model import ArmModel

KINDS = {"PD": K.PD, "PD+G": K.PDG, "PD+FF": K.PDFF, "ID": K.ID, "ID-literal": K.ID_LITERAL}
ACCELERATION_GAINS = ("ID", "ID-literal")


@dataclass(frozen=True)
class ControllerSpec:
    """Controller law and diagonal gains.

    For PD, PD+G and PD+FF the gains are torques per rad.  For the ID laws
    they act in acceleration units (1/s^2 and 1/s) since the feedback term
    enters the inverse dynamics as a reference acceleration.  ``"ID"`` is
    computed torque, ``qdd_ref = qdd_d + K_P e + K_D e'``; ``"ID-literal"``
    drops ``qdd_d``.
    """

    kind: str
    kp: np.ndarray
    kd: np.ndarray
    control_rate: float = 500.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller {self.kind!r}; choose from {sorted(KINDS)}")
        kp = np.array(self.kp, float)
        kd = np.array(self.kd, float)
        if kp.shape != kd.shape or np.any(kp <= 0) or np.any(kd <= 0):
            raise ValueError("gains must be positive and of equal length")
        if not self.control_rate > 0:
            raise ValueError("control_rate must be positive")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @property
    def code(self):
        return KINDS[self.kind]


def critically_damped_gains(model: ArmModel, frequency=10.0, q=None, kind="PD"):
    """Per-joint gains with a critically damped linearised loop at ``frequency`` Hz.

    Torque-unit gains scale with the diagonal of ``M`` at ``q`` (default the
    nominal posture); ID gains are the bare ``w^2`` and ``2 w``.
    """
    w = 2.0 * np.pi * frequency
    if kind in ACCELERATION_GAINS:
        n = model.n_joints
        return np.full(n, w * w), np.full(n, 2.0 * w)
    m = np.diag(mass_matrix(model, model.nominal if q is None else q))
    return m * w * w, 2.0 * m * w


def default_controller(kind, model: ArmModel, frequency=10.0, control_rate=500.0):
    kp, kd = critically_damped_gains(model, frequency, kind=kind)
    return ControllerSpec(kind, kp, kd, control_rate)


def control_torque(spec: ControllerSpec, model: ArmModel, desired: JointState,
                   measured: JointState):
    """Torque of the selected law; ``model`` is the controller's dynamics model."""
    f = lambda x: np.ascontiguousarray(x, float)
    return K.control_law(spec.code, spec.kp, spec.kd, *model.arrays(), model.gravity,
                         f(measured.q), f(measured.qd), f(desired.q), f(desired.qd),
                         f(desired.qdd))
