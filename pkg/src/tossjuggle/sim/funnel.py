"""Clearance of a ball inside a cone-shaped hand.

The hand is a cone with rim radius ``R_c`` and half-angle ``theta`` about the
hand normal.  A seated ball touches the wall with its centre ``r_b / sin(theta)``
above the apex, which is taken as the hand point.  Relative to the seat, a ball
centre at axial offset ``s`` and lateral offset ``l`` clears the wall iff
``l <= s tan(theta)``; this holds until the centre rises ``D`` above the seat,
where the ball leaves the cup.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Funnel:
    rim_radius: float = 0.085
    half_angle_deg: float = 25.0
    ball_radius: float = 0.0375
    slack: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.half_angle_deg < 90.0:
            raise ValueError("cone half-angle must lie in (0, 90) degrees")
        if self.depth <= 0:
            raise ValueError("ball does not fit into the cone")

    @property
    def tan(self):
        return math.tan(math.radians(self.half_angle_deg))

    @property
    def depth(self):
        th = math.radians(self.half_angle_deg)
        return self.rim_radius / math.tan(th) - self.ball_radius / math.sin(th)

    def violations(self, rel, normals):
        """Boolean mask of samples where the ball penetrates the hand.

        ``rel`` are ball centres relative to the seat, ``normals`` the unit hand
        normals, both ``(n, 3)``.  Samples above the rim, or laterally beyond
        the hand's footprint, cannot touch it.
        """
        rel = np.atleast_2d(rel)
        normals = np.atleast_2d(normals)
        s = np.einsum("ij,ij->i", rel, normals)
        lat = np.linalg.norm(rel - s[:, None] * normals, axis=1)
        near = (s <= self.depth) & (lat <= self.rim_radius + self.ball_radius)
        wall = (s >= 0) & (lat > s * self.tan + self.slack)
        below = s < -self.slack
        return near & (wall | below)

    def first_violation(self, rel, normals, stop_above_rim=False):
        """Index of the first violating sample, or ``None``.

        With ``stop_above_rim`` the scan ends once the ball centre has risen
        above the rim (used after take-off).
        """
        bad = self.violations(rel, normals)
        if stop_above_rim:
            s = np.einsum("ij,ij->i", np.atleast_2d(rel), np.atleast_2d(normals))
            out = np.flatnonzero(s > self.depth)
            if out.size:
                bad = bad[:out[0]]
        idx = np.flatnonzero(bad)
        return int(idx[0]) if idx.size else None

    @staticmethod
    def angle_deg(rel, normal):
        """Angle of a relative offset from the hand normal."""
        rel = np.asarray(rel, float)
        s = rel @ normal
        lat = np.linalg.norm(rel - s * np.asarray(normal))
        return math.degrees(math.atan2(lat, s))
