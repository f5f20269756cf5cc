"""Event-driven juggling trials.

Trials start in a running pattern: at ``t = 0`` hand 0 is releasing its ball,
hand 1 is half way through its cycle and the remaining balls are on their
nominal parabolas.  Each hand then alternates touch-down and take-off events.
At take-off the next cycle is re-planned from the ball's actual prediction.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..arm import kinematics as kin
from ..arm.control import ControllerSpec, default_controller
from ..arm.kinematics import IKError
from ..arm.model import load_model, perturb_masses, shipped_model
from ..ballistics import (IN_FLIGHT, IN_HAND, BallState, UnreachableError, disturb_takeoff,
                          position_at, predict_touchdown, takeoff_velocity)
from ..pattern import (PatternError, PatternSpec, compute_geometry, derive_timing,
                       generate_schedule)
from ..trajopt_joint import SQPError
from ..trajopt_task import PlannerConfig, PlanningError, build_problem, sample_trajectory
from .collisions import window_check
from .funnel import Funnel
from .hands import ArmHand, Divergence, FloatingHand, PlannerFailure

MODES = ("floating_hands", "arm")
DROP_CAUSES = ("none", "missed_catch", "ball_collision", "planner_infeasible",
               "controller_divergence")


class SimConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class SimConfig:
    """Settings of one trial (``n_trials`` is used by the experiment runner).

    ``controller`` is a controller kind or a full :class:`ControllerSpec`; a
    kind gets critically damped gains at ``controller_frequency``.  The cone
    geometry (``catch_tolerance_radius`` as rim radius and
    ``cone_half_angle_deg``) defines both the catch sphere and the funnel
    clearance test.  ``funnel`` is ``"on"``, ``"off"`` or ``"auto"`` (on for
    floating hands only: the wrist-less arm rotates its cone at take-off,
    which a rigid clearance test reads as contact on every throw).
    """

    pattern: PatternSpec
    kind: str | None = None
    mode: str = "floating_hands"
    controller: object = "ID"
    controller_frequency: float = 10.0
    control_rate: float = 500.0
    model_perturbation_std: float = 0.0
    arm_model: str = "wam4"
    ball_mass: float = 0.1
    disturbance_sigma: float = 0.0
    collisions_enabled: bool = True
    catch_tolerance_radius: float = 0.085
    cone_half_angle_deg: float = 25.0
    funnel: str = "auto"
    funnel_window: float = 0.15
    funnel_step: float = 5e-4
    max_catches: int = 100
    n_trials: int = 1
    seed: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    @property
    def pattern_kind(self):
        return self.kind or self.pattern.default_kind()

    @property
    def funnel_enabled(self):
        if self.funnel == "auto":
            return self.mode == "floating_hands"
        return self.funnel == "on"

    def validate(self):
        if self.mode not in MODES:
            raise SimConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pattern.n_hands != 2:
            raise SimConfigError("the simulator models two hands")
        for name in ("catch_tolerance_radius", "funnel_window", "funnel_step",
                     "controller_frequency", "control_rate", "ball_mass"):
            if not getattr(self, name) > 0:
                raise SimConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("disturbance_sigma", "model_perturbation_std"):
            if getattr(self, name) < 0:
                raise SimConfigError(f"{name} must be non-negative")
        if self.funnel not in ("auto", "on", "off"):
            raise SimConfigError("funnel must be 'auto', 'on' or 'off'")
        if int(self.max_catches) != self.max_catches or self.max_catches < 1:
            raise SimConfigError("max_catches must be an integer >= 1")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise SimConfigError("n_trials must be an integer >= 1")
        if not 0 < self.cone_half_angle_deg < 90:
            raise SimConfigError("cone_half_angle_deg must lie in (0, 90)")
        try:
            generate_schedule(self.pattern, self.pattern_kind, 1)
        except PatternError as e:
            raise SimConfigError(f"infeasible pattern: {e}") from e

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["pattern"] = asdict(self.pattern)
        d["planner"] = asdict(self.planner)
        c = self.controller
        if isinstance(c, ControllerSpec):
            d["controller"] = {"kind": c.kind, "kp": c.kp.tolist(), "kd": c.kd.tolist(),
                               "control_rate": c.control_rate}
        d["kind"] = self.pattern_kind
        return d

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class SimReport:
    catches: int
    drop_cause: str
    touch_down_errors: list
    min_interball_distance: float
    min_center_distance: float
    per_cycle_solve_stats: list
    end_time: float
    detail: str = ""
    seed: int = 0

    def mean_error(self, first=None):
        e = self.touch_down_errors if first is None else self.touch_down_errors[:first]
        return float(np.mean(e)) if len(e) else math.nan

    def to_dict(self):
        return asdict(self)


@dataclass
class HandRuntime:
    hand: object
    cycle: int
    event: object
    cycle_start: float
    td_time: float
    next_kind: str
    held: int | None = None

    @property
    def next_time(self):
        return self.td_time if self.next_kind == "td" else self.event.take_off_time


@dataclass
class WorldState:
    """Clock, balls, hands and the trial's random stream."""

    clock: float
    balls: list
    hands: list
    rng: np.random.Generator
    gravity: np.ndarray
    ball_radius: float
    thrown: dict = field(default_factory=dict)

    def airborne(self):
        return [b for b in self.balls if b.phase == IN_FLIGHT]

    def ball_state(self, ball_id, t):
        b = self.balls[ball_id]
        s = t - b.last_event_time
        return b.position + b.velocity * s + 0.5 * self.gravity * s * s

    def ball_path(self, ball_id, ts):
        b = self.balls[ball_id]
        return position_at(b.position, b.velocity, np.asarray(ts) - b.last_event_time, self.gravity)

    def conservation_ok(self):
        """Every ball in one phase; each hand holds one ball in dwell, none while vacant."""
        held = {}
        for b in self.balls:
            if b.phase == IN_HAND:
                if b.hand in held:
                    return False
                held[b.hand] = b.ball_id
            elif b.phase != IN_FLIGHT:
                return False
        for i, hr in enumerate(self.hands):
            dwell = hr.next_kind == "to"
            if dwell != (i in held) or (dwell and held[i] != hr.held):
                return False
        return True


def check_collisions(world: WorldState, t_end=None, enabled=True):
    """Closest approach among airborne balls from ``world.clock`` to ``t_end``.

    Returns ``(min_centre_distance, events)``; ``events`` lists contacts
    (centre distance below ``2 r_b``) when ``enabled``.  With ``t_end`` omitted
    only the current instant is tested.
    """
    t_end = world.clock if t_end is None else t_end
    flying = world.airborne()
    ids = [b.ball_id for b in flying]
    P = np.array([world.ball_state(i, world.clock) for i in ids]).reshape(-1, 3)
    V = np.array([b.velocity + world.gravity * (world.clock - b.last_event_time)
                  for b in flying]).reshape(-1, 3)
    return window_check(ids, P, V, world.clock, max(0.0, t_end - world.clock),
                        world.ball_radius, enabled)


class _Stop(Exception):
    def __init__(self, cause, detail, t):
        super().__init__(detail)
        self.cause, self.detail, self.t = cause, detail, t


class _Trial:
    def __init__(self, config: SimConfig, seed, log, check_invariants, on_solve=None):
        config.validate()
        self.cfg = config
        self.seed = seed
        self.log = log
        self.check = check_invariants
        self.on_solve = on_solve
        spec = config.pattern
        self.spec = spec
        self.kind = config.pattern_kind
        self.timing = derive_timing(spec, self.kind)
        self.geo = compute_geometry(spec, self.kind)
        self.g = spec.g
        self.funnel = Funnel(config.catch_tolerance_radius, config.cone_half_angle_deg,
                             spec.ball_radius)
        self.rng = np.random.default_rng(seed)
        self.catches = 0
        self.errors = []
        self.stats = []
        self.min_d = math.inf
        self._hands = self._make_hands()

    # setup

    def _make_hands(self):
        cfg = self.cfg
        if cfg.mode == "floating_hands":
            return [FloatingHand(0), FloatingHand(1)]
        name = cfg.arm_model
        base = load_model(name) if name.endswith(".arm") else shipped_model(name)
        # the shipped arm is the right (+x) arm; the left one is its translate
        right = base
        left = base.mirrored()
        # both controller models share one set of mass factors
        pert = perturb_masses(right, cfg.model_perturbation_std, self.rng)
        ratio = pert.masses / right.masses
        models = [left, right]
        hands = []
        for h, m in enumerate(models):
            cm = m.with_masses(m.masses * ratio)
            c = cfg.controller
            spec = c if isinstance(c, ControllerSpec) else default_controller(
                c, cm, cfg.controller_frequency, cfg.control_rate)
            hands.append(ArmHand(h, m, cm, spec, cfg.ball_mass))
        return hands

    def _event(self, hand, k):
        return generate_schedule(self.spec, self.kind, 1, first_cycle=k)[hand].events[0]

    def _nominal_hand_velocity(self, hand):
        ev = self._event(hand, 0)
        return takeoff_velocity(ev.take_off_location, ev.target_touch_down_location,
                                ev.flight_time, self.spec.alpha, self.g)

    def _emit(self, **rec):
        if self.log is not None:
            self.log({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in rec.items()})

    def _initial_world(self):
        spec, T = self.spec, self.timing
        T_c, T_d, T_f = T.cycle_time, T.dwell_time, T.flight_time
        nb = spec.n_balls
        balls = []
        nominal = {}
        for b in range(nb):
            n_prev = b - nb
            thrower = n_prev % 2
            t_prev = n_prev * T_c / 2.0
            ev = self._event(thrower, n_prev // 2)
            v = spec.alpha * takeoff_velocity(ev.take_off_location, ev.target_touch_down_location,
                                              T_f, spec.alpha, self.g)
            p0 = position_at(ev.take_off_location, v, -t_prev, self.g)
            v0 = v + self.g * (-t_prev)
            nominal[b] = BallState(b, p0, v0, last_event_time=0.0)
            state = nominal[b].copy()
            if t_prev + T_f < 0.0:
                state.phase, state.hand = IN_HAND, ev.receiver
            balls.append(state)
        world = WorldState(0.0, balls, [], self.rng, self.g, spec.ball_radius)

        for h, hand in enumerate(self._hands):
            v_to = self._nominal_hand_velocity(h)
            x_to = self.geo.throw_stations[h]
            if isinstance(hand, ArmHand):
                hand.takeoff = kin.ik_takeoff(hand.model, x_to, v_to, self.g)
            triple = (x_to, v_to, self.g)
            if h == 0:
                ev = self._event(0, 0)
                if isinstance(hand, ArmHand):
                    hand.start(hand.takeoff.q, hand.takeoff.qd, 0.0)
                else:
                    hand.start(triple, 0.0)
                hr = HandRuntime(hand, 0, ev, -T_c, -T_d, "to", held=0)
                balls[0].phase, balls[0].hand = IN_HAND, 0
            else:
                ev = self._event(1, 0)
                t0 = ev.take_off_time - T_c
                inc = ev.incoming_ball_id
                ball0 = nominal[inc]
                problem = build_problem(ev, ball0, hand.initial_for_next() if isinstance(hand, ArmHand)
                                        else triple, self.cfg.planner, t_start=t0,
                                        plane_z=spec.catch_plane_height, gravity=self.g,
                                        alpha=spec.alpha)
                self._solve(1, hand, problem)
                self.stats[-1].update(cycle=0, t_start=t0)
                td = t0 + problem.k_td * problem.dt
                if isinstance(hand, ArmHand):
                    q, qd, _ = sample_trajectory(hand.plan, -t0)
                    hand.start(q, qd, 0.0)
                else:
                    hand.start(triple, t0)
                held = balls[inc].phase == IN_HAND
                hand.set_payload(held)
                hr = HandRuntime(hand, 0, ev, t0, td, "to" if held else "td",
                                 held=inc if held else None)
            world.hands.append(hr)
        return world

    def _solve(self, h, hand, problem):
        sol, st = hand.solve(problem)
        self.stats.append(dict(st, hand=h))
        if self.on_solve is not None:
            self.on_solve(h, problem, sol, getattr(hand, "joint_problem", None))

    # events

    def _touchdown(self, w: WorldState, h):
        hr = w.hands[h]
        hand, t = hr.hand, hr.td_time
        hand.advance(t)
        inc = hr.event.incoming_ball_id
        ball = w.balls[inc]
        if ball.phase != IN_FLIGHT:
            raise _Stop("missed_catch", f"ball {inc} is not airborne at its touch-down", t)
        b = w.ball_state(inc, t)
        p, v, _ = hand.state(t)
        off = b - p
        if np.linalg.norm(off) > self.cfg.catch_tolerance_radius:
            raise _Stop("missed_catch", f"hand {h} misses ball {inc} by "
                        f"{np.linalg.norm(off):.4f} m at t={t:.4f}", t)
        if self.cfg.funnel_enabled:
            t0 = max(hr.cycle_start, t - self.cfg.funnel_window)
            ts, X, N = hand.window(t0, t, self.cfg.funnel_step)
            rel = w.ball_path(inc, ts) - X - off
            i = self.funnel.first_violation(rel, N)
            if i is not None:
                raise _Stop("missed_catch", f"ball {inc} strikes hand {h} before touch-down "
                            f"at t={ts[i]:.4f}", float(ts[i]))
        ball.phase, ball.hand = IN_HAND, h
        ball.position, ball.velocity, ball.last_event_time = p.copy(), v.copy(), t
        hr.held, hr.next_kind = inc, "to"
        hand.set_payload(True)
        rec = w.thrown.pop(inc, None)
        err = None
        if rec is not None:
            target, landing = rec
            err = float(np.linalg.norm(landing - target))
            self.catches += 1
            self.errors.append(err)
        self._emit(t=t, event="touch_down", hand=h, ball=inc, counted=rec is not None,
                   error=err, offset=float(np.linalg.norm(off)))
        if self.catches >= self.cfg.max_catches:
            raise _Stop("none", "catch cap reached", t)

    def _takeoff(self, w: WorldState, h):
        hr = w.hands[h]
        hand, t = hr.hand, hr.event.take_off_time
        hand.advance(t)
        p, v, _ = hand.state(t)
        out = hr.held
        ball = w.balls[out]
        v_rel = self.spec.alpha * v
        vel = disturb_takeoff(v_rel, self.cfg.disturbance_sigma, w.rng)
        ball.phase, ball.hand = IN_FLIGHT, None
        ball.position, ball.velocity, ball.last_event_time = p.copy(), vel, t
        hand.set_payload(False)
        hr.held = None
        try:
            landing = predict_touchdown(ball, self.spec.catch_plane_height, self.g).location
        except UnreachableError:
            landing = np.full(3, np.nan)
        w.thrown[out] = (np.asarray(hr.event.target_touch_down_location), landing)
        self._emit(t=t, event="take_off", hand=h, ball=out, position=p, velocity=vel)

        k = hr.cycle + 1
        ev = self._event(h, k)
        inc = ev.incoming_ball_id
        if w.balls[inc].phase != IN_FLIGHT:
            raise _Stop("planner_infeasible", f"ball {inc} is not airborne when hand {h} plans", t)
        try:
            problem = build_problem(ev, w.balls[inc], hand.initial_for_next(), self.cfg.planner,
                                    t_start=t, plane_z=self.spec.catch_plane_height,
                                    gravity=self.g, alpha=self.spec.alpha)
            self._solve(h, hand, problem)
        except (PlanningError, PlannerFailure, SQPError, IKError, UnreachableError) as e:
            raise _Stop("planner_infeasible", f"hand {h} cycle {k}: {e}", t) from None
        self.stats[-1].update(cycle=k, t_start=t)
        hr.cycle, hr.event, hr.cycle_start = k, ev, t
        hr.td_time = t + problem.k_td * problem.dt
        hr.next_kind = "td"
        if isinstance(hand, ArmHand):
            hand.trim(t)
        # the released ball must clear the hand on its way out; the disturbance
        # acts once the ball has separated, so clearance uses the clean release
        if not self.cfg.funnel_enabled:
            return
        t1 = min(t + self.cfg.funnel_window, hr.td_time)
        hand.advance(t1)
        ts, X, N = hand.window(t, t1, self.cfg.funnel_step)
        rel = position_at(p, v_rel, ts - t, self.g) - X
        i = self.funnel.first_violation(rel, N, stop_above_rim=True)
        if i is not None:
            raise _Stop("missed_catch", f"hand {h} strikes ball {out} after take-off "
                        f"at t={ts[i]:.4f}", float(ts[i]))

    def run(self):
        try:
            w = self._initial_world()
        except (PlanningError, PlannerFailure, SQPError, IKError) as e:
            return self._report("planner_infeasible", f"initial cycle: {e}", 0.0)
        except Divergence as e:
            return self._report("controller_divergence", str(e), 0.0)
        self.world = w
        limit = 4 * (self.cfg.max_catches + self.spec.n_balls) + 16
        try:
            for _ in range(limit):
                h = min(range(2), key=lambda i: (w.hands[i].next_time, i))
                hr = w.hands[h]
                t_ev = hr.next_time
                d, hits = check_collisions(w, t_ev, self.cfg.collisions_enabled)
                if hits:
                    e = hits[0]
                    self.min_d = min(self.min_d, e.distance)
                    raise _Stop("ball_collision", f"balls {e.ball_a} and {e.ball_b} collide "
                                f"at t={e.time:.4f}", e.time)
                self.min_d = min(self.min_d, d)
                w.clock = t_ev
                if hr.next_kind == "td":
                    self._touchdown(w, h)
                else:
                    self._takeoff(w, h)
                if self.check and not w.conservation_ok():
                    raise AssertionError(f"ball conservation violated at t={w.clock}")
            raise _Stop("none", "event limit reached", w.clock)
        except _Stop as s:
            self._emit(t=s.t, event="end", cause=s.cause, detail=s.detail)
            return self._report(s.cause, s.detail, s.t)
        except Divergence as e:
            self._emit(t=w.clock, event="end", cause="controller_divergence", detail=str(e))
            return self._report("controller_divergence", str(e), w.clock)

    def _report(self, cause, detail, t):
        gap = self.min_d - 2.0 * self.spec.ball_radius if math.isfinite(self.min_d) else math.inf
        return SimReport(catches=self.catches, drop_cause=cause, touch_down_errors=list(self.errors),
                         min_interball_distance=float(gap), min_center_distance=float(self.min_d),
                         per_cycle_solve_stats=self.stats, end_time=float(t), detail=detail,
                         seed=self.seed)


def run_trial(config: SimConfig, seed=None, log=None, check_invariants=False,
              on_solve=None) -> SimReport:
    """Simulate one trial.

    Parameters
    ----------
    config : SimConfig
    seed : int or numpy SeedSequence, optional
        Overrides ``config.seed``.
    log : callable, optional
        Receives one dict per event (touch-down, take-off, end).
    check_invariants : bool
        Assert ball conservation after every event.
    on_solve : callable, optional
        Called as ``on_solve(hand, problem, solution, joint_problem)`` after
        every cycle plan (``joint_problem`` is ``None`` for floating hands).

    Raises
    ------
    SimConfigError
        For invalid configurations; failures during the trial are reported in
        ``drop_cause`` instead.
    """
    seed = config.seed if seed is None else seed
    trial = _Trial(config, seed, log, check_invariants, on_solve)
    rep = trial.run()
    if not isinstance(seed, (int, np.integer)):
        rep.seed = config.seed
    return rep
