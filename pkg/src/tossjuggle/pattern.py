"""Juggling pattern theory and event scheduling.

Timing follows Shannon's juggling theorem.  With ``N_b`` balls, ``N_h``
hands and dwell ratio ``R`` a hand holds a ball for ``T_d = R T_c`` of
each cycle ``T_c``, and on average ``W = N_b / N_h - R`` balls per hand are
airborne.  Geometry is a symmetric two-hand layout in the ``x``-``z`` plane:

* throw stations sit at ``x = -c/2`` (hand 0) and ``x = +c/2`` (hand 1),
* catch stations sit outboard of them by the carry distance ``d_d``,

so a cascade throw travels ``d_f = c + d_d`` and a fountain throw ``d_f = d_d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

PatternKind = Literal["cascade", "fountain"]

GRAVITY = (0.0, 0.0, -9.81)


class PatternError(ValueError):
    """Raised for invalid or infeasible pattern definitions."""


@dataclass(frozen=True)
class PatternSpec:
    n_balls: int
    n_hands: int = 2
    dwell_ratio: float = 0.5
    throw_height: float = 0.8
    ball_radius: float = 0.0375
    carry_distance: float = 0.10
    crossing_distance: float = 0.52
    catch_plane_height: float = 0.0
    alpha: float = 1.0
    gravity: tuple = GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "gravity", tuple(float(v) for v in self.gravity))
        if int(self.n_balls) != self.n_balls or self.n_balls < 1:
            raise PatternError(f"n_balls must be a positive integer, got {self.n_balls}")
        if int(self.n_hands) != self.n_hands or self.n_hands < 1:
            raise PatternError(f"n_hands must be a positive integer, got {self.n_hands}")
        if not 0.0 < self.dwell_ratio < 1.0:
            raise PatternError(f"dwell_ratio must lie in (0, 1), got {self.dwell_ratio}")
        for name in ("throw_height", "ball_radius", "alpha"):
            if not getattr(self, name) > 0.0:
                raise PatternError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("carry_distance", "crossing_distance"):
            if getattr(self, name) < 0.0:
                raise PatternError(f"{name} must be non-negative, got {getattr(self, name)}")
        if len(self.gravity) != 3 or not self.gravity[2] < 0.0:
            raise PatternError("gravity must be a 3-vector pointing down (negative z)")

    @property
    def g(self) -> np.ndarray:
        return np.array(self.gravity)

    def default_kind(self) -> PatternKind:
        return "cascade" if self.n_balls % 2 else "fountain"


@dataclass(frozen=True)
class PatternTiming:
    flight_time: float
    cycle_time: float
    dwell_time: float
    vacant_time: float
    balls_in_air: float
    travel_distance: float
    ball_spacing: float


@dataclass(frozen=True)
class Geometry:
    """Nominal stations per hand, indexed by hand id."""

    kind: PatternKind
    throw_stations: np.ndarray = field(repr=False)
    catch_stations: np.ndarray = field(repr=False)
    travel_distance: float = 0.0

    def receiver(self, hand: int) -> int:
        return 1 - hand if self.kind == "cascade" else hand


@dataclass(frozen=True)
class CycleEvent:
    touch_down_time: float
    touch_down_location_nominal: np.ndarray
    take_off_time: float
    take_off_location: np.ndarray
    target_touch_down_location: np.ndarray
    flight_time: float
    incoming_ball_id: int
    outgoing_ball_id: int
    receiver: int


@dataclass(frozen=True)
class HandSchedule:
    hand_id: int
    events: tuple


def flight_time(throw_height, gravity_z=-9.81):
    return 2.0 * math.sqrt(2.0 * throw_height / abs(gravity_z))


def balls_in_air(n_balls, n_hands, dwell_ratio):
    return n_balls / n_hands - dwell_ratio


def ball_spacing(d_f, W, r_b):
    """Horizontal gap between consecutive balls on one flight arc.

    A negative value means neighbouring balls overlap.
    """
    if not W > 0:
        raise PatternError(f"balls in air must be positive, got {W}")
    return d_f / W - 2.0 * r_b


def max_balls(d_f, r_b, R, n_hands=2):
    """Largest ball count with a strictly positive ball spacing.

    ``d_b > 0`` is equivalent to ``N_b < N_h (d_f / (2 r_b) + R)``, which for two
    hands reads ``N_b < d_f / r_b + 2 R``.  The bound does not depend on the
    throw height.
    """
    if not (d_f > 0 and r_b > 0 and 0 < R < 1):
        raise PatternError("max_balls requires d_f > 0, r_b > 0 and R in (0, 1)")
    bound = n_hands * (d_f / (2.0 * r_b) + R)
    n = math.ceil(bound) - 1
    # guard against ceil landing on an exact float product
    while n >= 1 and not n < bound:
        n -= 1
    return max(n, 0)


def check_parity(spec: PatternSpec, kind: PatternKind):
    if kind not in ("cascade", "fountain"):
        raise PatternError(f"unknown pattern kind {kind!r}")
    if spec.n_hands != 2:
        raise PatternError("station layout is defined for two hands only")
    if kind == "cascade" and spec.n_balls % 2 == 0:
        raise PatternError(f"cascade needs an odd ball count, got {spec.n_balls}")
    if kind == "fountain" and spec.n_balls % 2 == 1:
        raise PatternError(f"fountain needs an even ball count, got {spec.n_balls}")


def compute_geometry(spec: PatternSpec, kind: PatternKind = "cascade") -> Geometry:
    check_parity(spec, kind)
    half = 0.5 * spec.crossing_distance
    z = spec.catch_plane_height
    sides = np.array([-1.0, 1.0])
    throw = np.array([[s * half, 0.0, z] for s in sides])
    catch = np.array([[s * (half + spec.carry_distance), 0.0, z] for s in sides])
    if kind == "cascade":
        d_f = spec.crossing_distance + spec.carry_distance
    else:
        d_f = spec.carry_distance
    return Geometry(kind, throw, catch, d_f)


def travel_distance(spec: PatternSpec, kind: PatternKind = "cascade"):
    if kind == "cascade":
        return spec.crossing_distance + spec.carry_distance
    return spec.carry_distance


def derive_timing(spec: PatternSpec, kind: PatternKind | None = None) -> PatternTiming:
    kind = kind or spec.default_kind()
    W = balls_in_air(spec.n_balls, spec.n_hands, spec.dwell_ratio)
    if W <= 0:
        raise PatternError(
            f"no airborne balls: n_balls/n_hands = {spec.n_balls / spec.n_hands} "
            f"<= dwell_ratio = {spec.dwell_ratio}"
        )
    T_f = flight_time(spec.throw_height, spec.gravity[2])
    T_c = T_f / W
    T_d = spec.dwell_ratio * T_c
    T_v = T_c - T_d
    d_f = travel_distance(spec, kind)
    d_b = d_f / W - 2.0 * spec.ball_radius
    return PatternTiming(T_f, T_c, T_d, T_v, W, d_f, d_b)


def shannon_residual(timing: PatternTiming, n_balls, n_hands):
    lhs = (timing.flight_time + timing.dwell_time) / n_balls
    rhs = (timing.vacant_time + timing.dwell_time) / n_hands
    return abs(lhs - rhs)


def hand_phase(hand, cycle_time):
    """Take-off time offset of ``hand``; the hands alternate every half cycle."""
    return 0.5 * cycle_time * hand


def ball_for_throw(hand, cycle, n_balls):
    """Ball thrown by ``hand`` in its ``cycle``-th take-off (cycle may be negative)."""
    return (2 * cycle + hand) % n_balls


def generate_schedule(spec: PatternSpec, kind: PatternKind = "cascade", horizon_cycles=4,
                      first_cycle=0):
    """Event schedule of each hand for ``horizon_cycles`` consecutive cycles.

    Cycle ``k`` of hand ``h`` ends with a take-off at ``h T_c / 2 + k T_c``.
    Throws of both hands interleave every half cycle, and the ``n``-th throw
    overall carries ball ``n mod N_b``.

    Raises
    ------
    PatternError
        On parity violations and when the ball spacing is not positive.
    """
    geo = compute_geometry(spec, kind)
    timing = derive_timing(spec, kind)
    if timing.ball_spacing <= 0:
        raise PatternError(
            f"infeasible spacing: d_b = {timing.ball_spacing:.6g} m <= 0 "
            f"(d_f = {timing.travel_distance:.6g} m, W = {timing.balls_in_air:.6g}, "
            f"r_b = {spec.ball_radius:.6g} m); at most "
            f"{max_balls(timing.travel_distance, spec.ball_radius, spec.dwell_ratio, spec.n_hands)} balls"
        )
    T_c, T_d, T_f = timing.cycle_time, timing.dwell_time, timing.flight_time
    schedules = []
    for hand in range(spec.n_hands):
        rec = geo.receiver(hand)
        events = []
        for k in range(first_cycle, first_cycle + horizon_cycles):
            t_to = hand_phase(hand, T_c) + k * T_c
            ball = ball_for_throw(hand, k, spec.n_balls)
            events.append(CycleEvent(
                touch_down_time=t_to - T_d,
                touch_down_location_nominal=geo.catch_stations[hand].copy(),
                take_off_time=t_to,
                take_off_location=geo.throw_stations[hand].copy(),
                target_touch_down_location=geo.catch_stations[rec].copy(),
                flight_time=T_f,
                incoming_ball_id=ball,
                outgoing_ball_id=ball,
                receiver=rec,
            ))
        schedules.append(HandSchedule(hand, tuple(events)))
    return schedules
