import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uasr.errors import ConfigurationError, DegenerateGeometryError
from uasr.world import (
    GroundStation,
    Station,
    TrackingControl,
    TrackPath,
    TrainState,
    UavState,
    advance_train,
    horizontal_offset,
    slant_range_and_elevation,
    train_velocity,
    uav_tracking_step,
)

STRAIGHT = TrackPath("L", ((0.0, 0.0), (200_000.0, 0.0)))


def test_track_rejects_short_or_repeated_vertices():
    with pytest.raises(ConfigurationError):
        TrackPath("x", ((0.0, 0.0),))
    with pytest.raises(ConfigurationError):
        TrackPath("x", ((0.0, 0.0), (0.0, 0.0), (1.0, 0.0)))
    with pytest.raises(ConfigurationError):
        TrackPath("x", ((0.0, 0.0), (10.0, 0.0)), (Station(11.0),))


def test_polyline_arc_length_and_tangent():
    tr = TrackPath("p", ((0.0, 0.0), (300.0, 400.0), (300.0, 1400.0)))
    assert tr.length == 1500.0
    assert tr.point_at(250.0) == pytest.approx((150.0, 200.0))
    assert tr.point_at(1000.0) == pytest.approx((300.0, 900.0))
    assert tr.tangent_at(100.0) == pytest.approx((0.6, 0.8))
    assert tr.tangent_at(600.0, 1) == pytest.approx((0.0, -1.0))
    # clamped beyond the ends
    assert tr.point_at(-5.0) == (0.0, 0.0)
    assert tr.point_at(2e4) == (300.0, 1400.0)


def test_unknown_track_is_a_configuration_error():
    t = TrainState("T", "other", 0.0, 10.0)
    with pytest.raises(ConfigurationError):
        advance_train(t, STRAIGHT, 0.1)


def test_zero_speed_train_stays_put():
    t = TrainState("T", "L", 1234.5, 0.0)
    assert advance_train(t, STRAIGHT, 1.0).position == 1234.5


def test_uniform_motion():
    t = TrainState("T", "L", 0.0, 100.0, v_max=100.0)
    assert advance_train(t, STRAIGHT, 10.0).position == 1000.0


def _run_to_stop(t, track, dt=0.1, limit=10_000):
    for _ in range(limit):
        t = advance_train(t, track, dt)
        if t.speed == 0.0:
            return t
    raise AssertionError("train never stopped")


def test_stops_at_a_station_500m_ahead():
    track = TrackPath("L", ((0.0, 0.0), (200_000.0, 0.0)), (Station(50_500.0, 60.0),))
    t = _run_to_stop(TrainState("T", "L", 50_000.0, 97.22), track)
    assert abs(t.position - 50_500.0) <= 1.0
    assert t.dwell_remaining == 60.0


def test_braking_profile_from_cruise():
    # v^2/(2a) at 97.22 m/s and 1 m/s^2 is about 4726 m
    track = TrackPath("L", ((0.0, 0.0), (200_000.0, 0.0)), (Station(60_000.0, 60.0),))
    t = TrainState("T", "L", 40_000.0, 97.22)
    started = None
    for _ in range(5000):
        prev = t
        t = advance_train(t, track, 0.1)
        if started is None and t.speed < prev.speed:
            started = prev.position
        if t.speed == 0.0:
            break
    assert abs(t.position - 60_000.0) <= 1.0
    assert 60_000.0 - started == pytest.approx(97.22**2 / 2.0, abs=97.22 * 0.1 + 1.0)


def test_dwell_then_reaccelerate():
    track = TrackPath("L", ((0.0, 0.0), (200_000.0, 0.0)), (Station(1000.0, 2.0),))
    t = TrainState("T", "L", 1000.0, 0.0, dwell_remaining=2.0, cruise_speed=50.0)
    for _ in range(20):
        t = advance_train(t, track, 0.1)
    assert t.dwell_remaining == 0.0 and t.position == 1000.0
    t = advance_train(t, track, 0.1)
    assert t.speed == pytest.approx(0.1) and t.position > 1000.0


def test_train_clamped_at_track_end():
    t = TrainState("T", "L", 199_990.0, 90.0)
    t = advance_train(t, STRAIGHT, 1.0)
    assert t.position == STRAIGHT.length and t.speed == 0.0


@settings(max_examples=200, deadline=None)
@given(
    start=st.floats(0.0, 150_000.0),
    speed=st.floats(1.0, 97.0),
    direction=st.sampled_from([0, 1]),
    dt=st.sampled_from([0.01, 0.05, 0.1, 0.5]),
)
def test_arc_length_strictly_monotone_between_stations(start, speed, direction, dt):
    track = TrackPath("L", ((0.0, 0.0), (200_000.0, 0.0)), (Station(0.0), Station(200_000.0)))
    t = TrainState("T", "L", start, speed, direction)
    sign = 1 if direction == 0 else -1
    for _ in range(200):
        nt = advance_train(t, track, dt)
        if nt.speed == 0.0 or nt.dwell_remaining > 0.0:
            break
        assert sign * (nt.position - t.position) > 0.0
        t = nt


def test_hovering_over_a_stopped_train():
    t = TrainState("T", "L", 5000.0, 0.0)
    u = UavState("U", (5000.0, 0.0, 300.0), train="T")
    nu = uav_tracking_step(u, t, STRAIGHT, 0.1)
    assert nu.position == (5000.0, 0.0, 300.0)
    assert nu.velocity == (0.0, 0.0, 0.0)


def test_locked_uav_matches_train_velocity():
    t = TrainState("T", "L", 5000.0, 97.22)
    u = UavState("U", (5000.0, 0.0, 300.0), train="T")
    t = advance_train(t, STRAIGHT, 0.1)
    u = uav_tracking_step(u, t, STRAIGHT, 0.1)
    assert u.velocity[:2] == train_velocity(t, STRAIGHT)[:2] == (97.22, 0.0)


def test_pursuit_from_2km_behind():
    # saturated at v_max the gap closes at 111 - 97.22 = 13.78 m/s until the
    # proportional region (offset < 13.78/gain) and then decays by exp(-gain*t)
    v_train, v_uav, gain, tol = 97.22, 111.0, 0.5, 10.0
    closing = v_uav - v_train
    knee = closing / gain
    oracle = (2000.0 - knee) / closing + math.log(knee / tol) / gain
    assert oracle == pytest.approx(145.0, abs=1.0)

    t = TrainState("T", "L", 10_000.0, v_train)
    u = UavState("U", (8000.0, 0.0, 300.0), train="T", v_max=v_uav)
    ctl = TrackingControl(gain=gain, lock_tolerance=tol)
    dt = 0.1
    for n in range(1, 5000):
        t = advance_train(t, STRAIGHT, dt)
        u = uav_tracking_step(u, t, STRAIGHT, dt, ctl)
        if horizontal_offset(u, t, STRAIGHT) <= tol:
            break
    assert n * dt == pytest.approx(oracle, abs=1.0)


def test_tracking_requires_assignment():
    with pytest.raises(ValueError):
        uav_tracking_step(UavState("U", (0.0, 0.0, 300.0)), TrainState("T", "L", 0.0), STRAIGHT, 0.1)


@settings(max_examples=40, deadline=None)
@given(
    dx=st.floats(-20_000.0, 20_000.0),
    dy=st.floats(-5_000.0, 5_000.0),
    v_train=st.floats(0.0, 97.0),
    matched=st.booleans(),
)
def test_tracking_converges_and_stays_locked(dx, dy, v_train, matched):
    ctl = TrackingControl(matched_speed=matched)
    t = TrainState("T", "L", 50_000.0, v_train)
    u = UavState("U", (50_000.0 + dx, dy, 300.0), train="T")
    dt = 0.1
    locked_at = None
    # generous bound: saturated closing speed over the whole offset, plus settling
    limit = int((math.hypot(dx, dy) / (u.v_max - v_train) + 60.0) / dt)
    for n in range(limit):
        t = advance_train(t, STRAIGHT, dt)
        u = uav_tracking_step(u, t, STRAIGHT, dt, ctl)
        off = horizontal_offset(u, t, STRAIGHT)
        if locked_at is None:
            if off <= ctl.lock_tolerance:
                locked_at = n
        else:
            assert off <= ctl.lock_tolerance
            if n > locked_at + 200:
                break
    assert locked_at is not None


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 3000), dt=st.sampled_from([0.125, 0.25, 0.5, 1.0]), e0=st.integers(3600, 18000))
def test_endurance_decrements_sum_to_airborne_time(n, dt, e0):
    # binary-exact tick lengths make the sum exact in floating point too
    t = TrainState("T", "L", 0.0, 50.0)
    u = UavState("U", (0.0, 0.0, 300.0), train="T", endurance=float(e0))
    total = 0.0
    for _ in range(n):
        t = advance_train(t, STRAIGHT, dt)
        nu = uav_tracking_step(u, t, STRAIGHT, dt)
        assert nu.endurance <= u.endurance and nu.range <= u.range
        total += u.endurance - nu.endurance
        u = nu
    assert total == n * dt
    assert e0 - u.endurance == n * dt


def test_endurance_at_decimal_tick():
    # 0.1 s is not binary-exact; ten hours of decrements drift by ~1e-8 s
    t = TrainState("T", "L", 0.0, 50.0)
    u = UavState("U", (0.0, 0.0, 300.0), train="T")
    e0 = u.endurance
    for _ in range(36_000):
        t = advance_train(t, STRAIGHT, 0.1)
        u = uav_tracking_step(u, t, STRAIGHT, 0.1)
    assert e0 - u.endurance == pytest.approx(3600.0, abs=1e-6)


def test_overhead_geometry():
    assert slant_range_and_elevation((0.0, 0.0, 0.0), (0.0, 0.0, 500.0)) == (500.0, 90.0)


def test_isoceles_geometry():
    r, e = slant_range_and_elevation((0.0, 0.0, 0.0), (500.0, 0.0, 500.0))
    assert r == pytest.approx(707.11, abs=0.01)
    assert e == pytest.approx(45.0)


def test_low_angle_geometry():
    _, e = slant_range_and_elevation((0.0, 0.0, 0.0), (3794.0, 0.0, 500.0))
    assert e == pytest.approx(7.5, abs=0.01)
    assert e == pytest.approx(math.degrees(math.atan(500.0 / 3794.0)))


def test_coincident_points_rejected():
    with pytest.raises(DegenerateGeometryError):
        slant_range_and_elevation((1.0, 2.0, 3.0), (1.0, 2.0, 3.0))


coord = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=500)
@given(a=st.tuples(coord, coord, coord), b=st.tuples(coord, coord, coord))
def test_elevation_bounds(a, b):
    if a == b:
        return
    r, e = slant_range_and_elevation(a, b)
    assert r > 0.0
    assert -90.0 <= e <= 90.0


@given(x=coord, y=coord, z=coord, h=st.floats(1e-3, 1e5))
def test_overhead_is_exactly_ninety(x, y, z, h):
    assert slant_range_and_elevation((x, y, z), (x, y, z + h))[1] == 90.0
    assert slant_range_and_elevation((x, y, z + h), (x, y, z))[1] == -90.0


def test_ground_station_invariants():
    with pytest.raises(ValueError):
        GroundStation("G", (0.0, 0.0), beamwidth_deg=0.0)
    with pytest.raises(ValueError):
        GroundStation("G", (0.0, 0.0), beamwidth_deg=180.0)
    with pytest.raises(ValueError):
        GroundStation("G", (0.0, 0.0), peak_gain_dbi=-1.0)
    g = GroundStation("G", (0.0, 0.0), height=0.0).steer((1000.0, 0.0, 1000.0))
    assert g.boresight() == pytest.approx((math.sqrt(0.5), 0.0, math.sqrt(0.5)))


def test_train_speed_ceiling():
    with pytest.raises(ValueError):
        TrainState("T", "L", 0.0, 100.0)  # above 350 km/h
    TrainState("T", "L", 0.0, 350 / 3.6)
