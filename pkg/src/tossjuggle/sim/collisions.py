"""Ball-ball proximity for airborne balls.

All airborne balls share gravity, so the relative motion of any pair is a
straight line and the minimum distance over a window has a closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    ball_a: int
    ball_b: int
    distance: float


def pair_minimum(r0, u, duration):
    """Minimum of ``|r0 + u t|`` over ``t`` in ``[0, duration]``, vectorised over pairs.

    Returns ``(distance, t_min)``.
    """
    r0 = np.atleast_2d(r0)
    u = np.atleast_2d(u)
    uu = np.einsum("ij,ij->i", u, u)
    ru = np.einsum("ij,ij->i", r0, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(uu > 0, -ru / uu, 0.0)
    t = np.clip(t, 0.0, duration)
    d = np.linalg.norm(r0 + u * t[:, None], axis=1)
    return d, t


def first_contact(r0, u, radius, duration):
    """Earliest ``t`` in ``[0, duration]`` with ``|r0 + u t| <= radius``, else ``None``."""
    r0 = np.asarray(r0, float)
    u = np.asarray(u, float)
    c = r0 @ r0 - radius * radius
    if c <= 0:
        return 0.0
    a = u @ u
    b = 2.0 * (r0 @ u)
    disc = b * b - 4.0 * a * c
    if a == 0 or disc < 0 or b >= 0:
        return None
    t = (-b - np.sqrt(disc)) / (2.0 * a)
    return float(t) if t <= duration else None


def window_check(ids, positions, velocities, t0, duration, ball_radius, enabled=True):
    """Closest approach among airborne balls over ``[t0, t0 + duration]``.

    ``positions`` and ``velocities`` are the ball states at ``t0``.  Returns
    ``(min_centre_distance, events)`` where ``events`` holds at most one
    :class:`CollisionEvent` (the earliest contact) when ``enabled``.
    """
    n = len(ids)
    if n < 2:
        return np.inf, []
    P = np.asarray(positions, float)
    V = np.asarray(velocities, float)
    i, j = np.triu_indices(n, 1)
    r0 = P[j] - P[i]
    u = V[j] - V[i]
    d, _ = pair_minimum(r0, u, duration)
    dmin = float(d.min())
    if not enabled or dmin >= 2.0 * ball_radius:
        return dmin, []
    best = None
    for k in np.flatnonzero(d < 2.0 * ball_radius):
        t = first_contact(r0[k], u[k], 2.0 * ball_radius, duration)
        if t is not None and (best is None or t < best[0]):
            best = (t, k)
    if best is None:
        return dmin, []
    t, k = best
    a, b = sorted((ids[i[k]], ids[j[k]]))
    return dmin, [CollisionEvent(t0 + t, a, b, float(np.linalg.norm(r0[k] + u[k] * t)))]
