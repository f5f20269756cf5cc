"""Drag-free parabolic flight: propagation, plane crossings and throw aiming."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

IN_FLIGHT = "in-flight"
IN_HAND = "in-hand"
DROPPED = "dropped"


class UnreachableError(ValueError):
    """The ball never descends through the requested plane."""


@dataclass
class BallState:
    ball_id: int
    position: np.ndarray
    velocity: np.ndarray
    phase: str = IN_FLIGHT
    hand: int | None = None
    last_event_time: float = 0.0

    def copy(self):
        return replace(self, position=np.array(self.position, float),
                       velocity=np.array(self.velocity, float))


@dataclass(frozen=True)
class TouchDownPrediction:
    time: float
    location: np.ndarray
    velocity: np.ndarray


def propagate(state: BallState, dt, g) -> BallState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    g = np.asarray(g, float)
    out = state.copy()
    out.position = state.position + state.velocity * dt + 0.5 * g * dt * dt
    out.velocity = state.velocity + g * dt
    out.last_event_time = state.last_event_time + dt
    return out


def position_at(position, velocity, dt, g):
    """Vectorised ballistic position; ``dt`` may be an array of offsets."""
    dt = np.asarray(dt, float)[..., None]
    return np.asarray(position) + np.asarray(velocity) * dt + 0.5 * np.asarray(g) * dt * dt


def plane_crossing_time(z, vz, gz, plane_z):
    """Time until a descending crossing of ``plane_z``; ``None`` when there is none.

    Roots of ``gz t^2 / 2 + vz t + (z - plane_z) = 0``; the larger root is the
    descending one since ``gz < 0``.
    """
    a = 0.5 * gz
    b = vz
    c = z - plane_z
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    # with a < 0 the descending root is (-b - sq) / (2a); avoid cancellation for b < 0
    if b >= 0.0:
        t_desc = (-b - sq) / (2.0 * a)
    else:
        t_desc = 2.0 * c / (sq - b)
    if t_desc < 0.0:
        return None
    return t_desc


def predict_touchdown(state: BallState, plane_z, g) -> TouchDownPrediction:
    g = np.asarray(g, float)
    t = plane_crossing_time(state.position[2], state.velocity[2], g[2], plane_z)
    if t is None:
        raise UnreachableError(
            f"ball {state.ball_id} at z={state.position[2]:.4g} never descends through z={plane_z:.4g}"
        )
    later = propagate(state, t, g)
    loc = later.position.copy()
    loc[2] = plane_z
    return TouchDownPrediction(state.last_event_time + t, loc, later.velocity)


def takeoff_velocity(b_to, b_td_des, flight_time, alpha=1.0, g=(0.0, 0.0, -9.81)):
    """Hand velocity at release that sends the ball from ``b_to`` to ``b_td_des``.

    The ball leaves with ``alpha`` times the hand velocity.
    """
    if not flight_time > 0 or not alpha > 0:
        raise ValueError("flight_time and alpha must be positive")
    b_to = np.asarray(b_to, float)
    b_td_des = np.asarray(b_td_des, float)
    g = np.asarray(g, float)
    return (b_td_des - b_to) / (alpha * flight_time) - g * flight_time / (2.0 * alpha)


def disturb_takeoff(velocity, sigma, rng: np.random.Generator):
    """Add isotropic Gaussian noise with per-axis standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    velocity = np.asarray(velocity, float)
    noise = rng.normal(0.0, 1.0, size=3)
    if sigma == 0.0:
        return velocity.copy()
    return velocity + sigma * noise


def mechanical_energy(state: BallState, g):
    """Specific energy ``|v|^2 / 2 - g . b``, constant along ballistic flight."""
    return 0.5 * float(state.velocity @ state.velocity) - float(np.asarray(g) @ state.position)
