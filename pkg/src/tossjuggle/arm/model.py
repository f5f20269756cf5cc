"""Serial-arm description and its flat text file format.

Keys (``N`` counts joints from 1)::

    name = wam4
    n_joints = 4
    gravity = 0 0 -9.81
    base.position = x y z          # world position of frame 0
    base.rpy = roll pitch yaw      # world orientation of frame 0 (rad, ZYX)
    jointN.dh = a alpha d offset   # standard DH (m, rad)
    jointN.limits = lo hi          # rad
    jointN.velocity_limit = v      # rad/s
    jointN.jerk_limit = j          # rad/s^3
    linkN.mass = m                 # kg
    linkN.com = x y z              # COM in link frame N
    linkN.inertia = Ixx Iyy Izz [Ixy Ixz Iyz]  # about the COM, link frame N
    tool.position = x y z          # hand point in the last link frame
    tool.normal = x y z            # cone axis in the last link frame
    nominal = q1 ... qn            # elbow-down posture used to seed IK
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .. import config as cfg

ConfigError = cfg.ConfigError


def rpy_matrix(rpy):
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


@dataclass(frozen=True)
class ArmModel:
    """Immutable arm model; arrays are read-only views."""

    name: str
    dh: np.ndarray                  # (n, 4)
    base_R: np.ndarray
    base_p: np.ndarray
    joint_limits: np.ndarray        # (n, 2)
    velocity_limits: np.ndarray
    jerk_limits: np.ndarray
    masses: np.ndarray
    coms: np.ndarray                # (n, 3)
    inertias: np.ndarray            # (n, 3, 3)
    tool_position: np.ndarray
    tool_normal: np.ndarray
    nominal: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        for f in ("dh", "base_R", "base_p", "joint_limits", "velocity_limits", "jerk_limits",
                  "masses", "coms", "inertias", "tool_position", "tool_normal", "nominal",
                  "gravity"):
            a = np.array(getattr(self, f), float)
            a.setflags(write=False)
            object.__setattr__(self, f, a)
        n = self.n_joints
        shapes = {"dh": (n, 4), "joint_limits": (n, 2), "velocity_limits": (n,),
                  "jerk_limits": (n,), "masses": (n,), "coms": (n, 3), "inertias": (n, 3, 3),
                  "nominal": (n,), "base_R": (3, 3), "base_p": (3,), "tool_position": (3,),
                  "tool_normal": (3,), "gravity": (3,)}
        for k, s in shapes.items():
            if getattr(self, k).shape != s:
                raise ConfigError(f"{k} has shape {getattr(self, k).shape}, expected {s}",
                                  source=self.name)
        if np.any(self.masses <= 0):
            raise ConfigError("link masses must be positive", source=self.name)
        for i, I in enumerate(self.inertias):
            if not np.allclose(I, I.T):
                raise ConfigError(f"link{i + 1}.inertia is not symmetric", source=self.name)
            # point-mass links (zero inertia) are allowed for analytic test models
            if np.linalg.eigvalsh(I).min() < -1e-12:
                raise ConfigError(f"link{i + 1}.inertia is not positive semi-definite",
                                  source=self.name)
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ConfigError("joint limits must satisfy lo < hi", source=self.name)
        if abs(np.linalg.norm(self.tool_normal) - 1.0) > 1e-9:
            object.__setattr__(self, "tool_normal", self.tool_normal / np.linalg.norm(self.tool_normal))
            self.tool_normal.setflags(write=False)

    @property
    def n_joints(self):
        return self.dh.shape[0]

    def arrays(self):
        """Tuple consumed by the compiled dynamics kernels."""
        return (self.dh, self.base_R, self.base_p, self.masses, self.coms, self.inertias)

    def placed(self, position, nominal=None):
        """Copy mounted with frame 0 at ``position`` (orientation unchanged)."""
        nominal = self.nominal if nominal is None else np.asarray(nominal, float)
        return replace(self, base_p=np.asarray(position, float), nominal=nominal)

    def mirrored(self):
        """The other arm of a pair: base translated to ``-x``."""
        return self.placed(self.base_p * np.array([-1.0, 1.0, 1.0]))

    def with_masses(self, masses):
        """Copy with new link masses; inertias scale with the mass ratio."""
        masses = np.asarray(masses, float)
        ratio = masses / self.masses
        return replace(self, masses=masses, inertias=self.inertias * ratio[:, None, None])

    def with_payload(self, mass, offset=None):
        """Copy with a point mass rigidly attached to the last link.

        ``offset`` is the payload position in the last link frame (default: the
        tool point).  COM and inertia of the last link are recombined exactly.
        """
        if mass <= 0:
            return self
        p = self.tool_position if offset is None else np.asarray(offset, float)
        m0 = self.masses[-1]
        c0 = self.coms[-1]
        m = m0 + mass
        c = (m0 * c0 + mass * p) / m

        def shift(mm, r):
            return mm * (r @ r * np.eye(3) - np.outer(r, r))

        I = self.inertias[-1] + shift(m0, c0 - c) + shift(mass, p - c)
        masses = np.array(self.masses)
        coms = np.array(self.coms)
        inertias = np.array(self.inertias)
        masses[-1], coms[-1], inertias[-1] = m, c, I
        return replace(self, masses=masses, coms=coms, inertias=inertias)


def perturb_masses(model: ArmModel, std, rng: np.random.Generator, floor=0.1):
    """Masses scaled by independent factors ``1 + std * N(0, 1)``, clipped at ``floor``."""
    f = 1.0 + std * rng.normal(size=model.n_joints)
    return model.with_masses(model.masses * np.maximum(f, floor))


def _vec(m, key, n, lines, source, default=None):
    if key not in m:
        if default is not None:
            return np.asarray(default, float)
        raise ConfigError(f"missing key {key!r}", None, source)
    v = m[key]
    v = np.atleast_1d(np.asarray(v, float))
    if v.size != n:
        raise ConfigError(f"{key} needs {n} values, got {v.size}", lines.get(key), source)
    return v


def _inertia(m, key, lines, source):
    if key not in m:
        raise ConfigError(f"missing key {key!r}", None, source)
    v = np.atleast_1d(np.asarray(m[key], float))
    if v.size not in (3, 6):
        raise ConfigError(f"{key} needs 3 or 6 values, got {v.size}", lines.get(key), source)
    Ixx, Iyy, Izz = v[:3]
    Ixy, Ixz, Iyz = v[3:] if v.size == 6 else (0.0, 0.0, 0.0)
    return np.array([[Ixx, Ixy, Ixz], [Ixy, Iyy, Iyz], [Ixz, Iyz, Izz]])


def parse_model(text, source="<model>") -> ArmModel:
    m, lines = cfg.parse_text(text, source)
    if "n_joints" not in m or not isinstance(m["n_joints"], int) or m["n_joints"] < 1:
        raise ConfigError("n_joints must be a positive integer", lines.get("n_joints"), source)
    n = m["n_joints"]
    known = {"name", "n_joints", "gravity", "base.position", "base.rpy", "tool.position",
             "tool.normal", "nominal"}
    for i in range(1, n + 1):
        known |= {f"joint{i}.dh", f"joint{i}.limits", f"joint{i}.velocity_limit",
                  f"joint{i}.jerk_limit", f"link{i}.mass", f"link{i}.com", f"link{i}.inertia"}
    for k in m:
        if k not in known:
            raise ConfigError(f"unknown key {k!r}", lines[k], source)
    J = range(1, n + 1)
    return ArmModel(
        name=str(m.get("name", Path(source).stem)),
        dh=np.array([_vec(m, f"joint{i}.dh", 4, lines, source) for i in J]),
        base_R=rpy_matrix(_vec(m, "base.rpy", 3, lines, source, (0, 0, 0))),
        base_p=_vec(m, "base.position", 3, lines, source, (0, 0, 0)),
        joint_limits=np.array([_vec(m, f"joint{i}.limits", 2, lines, source, (-np.pi, np.pi))
                               for i in J]),
        velocity_limits=np.array([_vec(m, f"joint{i}.velocity_limit", 1, lines, source)[0]
                                  for i in J]),
        jerk_limits=np.array([_vec(m, f"joint{i}.jerk_limit", 1, lines, source)[0] for i in J]),
        masses=np.array([_vec(m, f"link{i}.mass", 1, lines, source)[0] for i in J]),
        coms=np.array([_vec(m, f"link{i}.com", 3, lines, source) for i in J]),
        inertias=np.array([_inertia(m, f"link{i}.inertia", lines, source) for i in J]),
        tool_position=_vec(m, "tool.position", 3, lines, source),
        tool_normal=_vec(m, "tool.normal", 3, lines, source),
        nominal=_vec(m, "nominal", n, lines, source, np.zeros(n)),
        gravity=_vec(m, "gravity", 3, lines, source, (0, 0, -9.81)),
    )


def load_model(path) -> ArmModel:
    path = Path(path)
    return parse_model(path.read_text(), str(path))


def shipped_model(name="wam4") -> ArmModel:
    """One of the models bundled with the package (``wam4`` or ``planar2``)."""
    ref = resources.files("tossjuggle.data").joinpath(f"{name}.arm")
    if not ref.is_file():
        raise FileNotFoundError(f"no shipped arm model named {name!r}")
    return parse_model(ref.read_text(), f"{name}.arm")
