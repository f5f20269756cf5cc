import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tossjuggle.pattern import (PatternError, PatternSpec, ball_spacing, balls_in_air,
                                compute_geometry, derive_timing, generate_schedule, max_balls,
                                shannon_residual)


def test_five_ball_timing():
    t = derive_timing(PatternSpec(5, dwell_ratio=0.5, throw_height=0.8))
    T_f = 2 * math.sqrt(2 * 0.8 / 9.81)
    assert t.flight_time == pytest.approx(0.8077, abs=1e-4)
    assert t.flight_time == pytest.approx(T_f, rel=1e-15)
    assert t.balls_in_air == 2.0
    assert t.cycle_time == pytest.approx(0.4039, abs=1e-4)
    assert t.dwell_time == pytest.approx(0.2019, abs=1e-4)


def test_two_ball_fountain_cycle_is_twice_the_flight():
    t = derive_timing(PatternSpec(2, throw_height=0.37))
    assert t.balls_in_air == 0.5
    assert t.cycle_time == pytest.approx(2 * t.flight_time, rel=1e-15)


def test_no_airborne_balls_rejected():
    with pytest.raises(PatternError):
        derive_timing(PatternSpec(1, dwell_ratio=0.6), "cascade")


@pytest.mark.parametrize("field,value", [("dwell_ratio", 0.0), ("dwell_ratio", 1.0),
                                         ("throw_height", 0.0), ("ball_radius", -1.0),
                                         ("carry_distance", -0.1), ("n_balls", 0)])
def test_spec_invariants(field, value):
    kw = {"n_balls": 3, field: value}
    with pytest.raises(PatternError):
        PatternSpec(**kw)


specs = st.builds(
    lambda nb, nh, R, h: PatternSpec(nb, nh, R, h, carry_distance=0.1),
    st.integers(1, 40), st.integers(1, 6), st.floats(0.05, 0.95), st.floats(0.05, 20.0),
).filter(lambda s: s.n_balls / s.n_hands > s.dwell_ratio)


@settings(max_examples=300, deadline=None)
@given(specs)
def test_timing_identities(spec):
    t = derive_timing(spec, "cascade")
    assert abs(t.cycle_time - (t.vacant_time + t.dwell_time)) <= 1e-15 * t.cycle_time
    assert t.dwell_time == spec.dwell_ratio * t.cycle_time
    assert t.balls_in_air == spec.n_balls / spec.n_hands - spec.dwell_ratio
    assert t.ball_spacing == t.travel_distance / t.balls_in_air - 2 * spec.ball_radius
    assert shannon_residual(t, spec.n_balls, spec.n_hands) < 1e-12 * t.cycle_time


def test_max_balls_paper_geometry():
    assert max_balls(0.62, 0.0375, 0.5) == 17


def test_ball_spacing_examples():
    assert ball_spacing(0.62, 8, 0.0375) == pytest.approx(0.0025, abs=1e-15)
    assert ball_spacing(1, 1, 0) == 1
    assert ball_spacing(0.62, 18 / 2 - 0.5, 0.0375) < 0


def test_max_balls_linear_in_distance():
    r = 0.03
    counts = [max_balls(2 * r * k + 1e-9, r, 0.5) for k in range(1, 30)]
    # N_b < 2k + 1 + tiny
    assert counts == [2 * k + 1 for k in range(1, 30)]


def _min_gap_brute_force(n_balls, d_f, r_b, R, T_f=0.8):
    """Smallest centre distance between same-arc balls, sampled over one cycle."""
    W = n_balls / 2 - R
    T_c = T_f / W
    vx = d_f / T_f
    best = np.inf
    for t in np.linspace(0.0, T_c, 41):
        ages = np.array([t + k * T_c for k in range(int(np.ceil(W)) + 2)])
        ages = ages[ages <= T_f]
        x = np.sort(vx * ages)
        if x.size > 1:
            best = min(best, float(np.min(np.diff(x))))
    return best


def test_max_balls_staircase_matches_brute_force():
    r_b, R = 0.0375, 0.5
    # offset keeps the grid off exact ties d_b = 0
    for d_f in np.linspace(0.2, 1.2, 21) + 1.3e-3:
        feasible = [nb for nb in range(2, 50) if _min_gap_brute_force(nb, d_f, r_b, R) > 2 * r_b]
        assert max(feasible) == max_balls(d_f, r_b, R), d_f


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.01, 0.1), st.floats(0.05, 0.95), st.floats(1e-3, 0.5))
def test_max_balls_monotone(d_f, r_b, R, step):
    n = max_balls(d_f, r_b, R)
    assert max_balls(d_f + step, r_b, R) >= n
    assert max_balls(d_f, r_b, min(R + step, 0.99)) >= n
    assert max_balls(d_f, r_b + step / 10, R) <= n


def test_geometry_layouts():
    g = compute_geometry(PatternSpec(5, crossing_distance=0.52, carry_distance=0.10), "cascade")
    assert g.travel_distance == pytest.approx(0.62)
    assert np.allclose(g.throw_stations[:, 0], [-0.26, 0.26])
    assert np.allclose(g.catch_stations[:, 0], [-0.36, 0.36])
    for cd in (0.0, 0.52, 3.0):
        f = compute_geometry(PatternSpec(4, crossing_distance=cd, carry_distance=0.10), "fountain")
        assert f.travel_distance == pytest.approx(0.10)
    z = compute_geometry(PatternSpec(3, carry_distance=0.0), "cascade")
    assert np.array_equal(z.throw_stations, z.catch_stations)


def test_parity_rule():
    with pytest.raises(PatternError):
        compute_geometry(PatternSpec(4), "cascade")
    with pytest.raises(PatternError):
        compute_geometry(PatternSpec(5), "fountain")


def test_three_ball_schedule():
    spec = PatternSpec(3)
    t = derive_timing(spec)
    sched = generate_schedule(spec, "cascade", 4)
    for hs in sched:
        to = [e.take_off_time for e in hs.events]
        assert np.allclose(np.diff(to), t.cycle_time, atol=1e-12, rtol=0)
        for e in hs.events:
            assert e.take_off_time - e.touch_down_time == pytest.approx(t.dwell_time, abs=1e-15)
            d = np.linalg.norm((e.take_off_location - e.target_touch_down_location)[:2])
            assert abs(d - t.travel_distance) < 1e-12
    # every ball alternates hands: merged throws in time order
    throws = sorted((e.take_off_time, hs.hand_id, e.outgoing_ball_id)
                    for hs in sched for e in hs.events)
    last = {}
    for _, hand, ball in throws:
        if ball in last:
            assert last[ball] != hand
        last[ball] = hand
    assert sched[1].events[0].take_off_time - sched[0].events[0].take_off_time == \
        pytest.approx(t.cycle_time / 2)


def test_fountain_balls_return_to_origin():
    sched = generate_schedule(PatternSpec(4, carry_distance=0.3), "fountain", 6)
    for hs in sched:
        for e in hs.events:
            assert e.receiver == hs.hand_id
    balls = [{e.outgoing_ball_id for e in hs.events} for hs in sched]
    assert not balls[0] & balls[1]


def test_airborne_count_bounded():
    spec = PatternSpec(5)
    t = derive_timing(spec)
    sched = generate_schedule(spec, "cascade", 8)
    flights = [(e.take_off_time, e.take_off_time + e.flight_time, hs.hand_id)
               for hs in sched for e in hs.events]
    for probe in np.linspace(2.0, 3.0, 101):
        for hand in (0, 1):
            n = sum(1 for a, b, h in flights if h == hand and a < probe < b)
            assert n <= math.ceil(t.balls_in_air)


def test_infeasible_spacing_rejected_with_diagnostic():
    with pytest.raises(PatternError, match="at most 17 balls"):
        generate_schedule(PatternSpec(19), "cascade")


def test_balls_in_air():
    assert balls_in_air(7, 2, 0.5) == 3.0
