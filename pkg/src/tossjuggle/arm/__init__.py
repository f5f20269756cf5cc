"""Serial-arm model, kinematics, dynamics and tracking control."""
from .model import ArmModel, load_model, parse_model, perturb_masses, shipped_model
from .kinematics import (IKError, JointState, forward_kinematics, hand_state, ik_takeoff,
                         ik_touchdown, jacobian, jacobian_dot)
