"""Geometry and mobility: tracks, trains, tracking UAVs and ground stations.

Planar coordinates in metres with altitude as the third axis. Track positions
are arc lengths along a polyline; direction 0 travels toward increasing arc
length, direction 1 toward decreasing.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

from .errors import ConfigurationError, DegenerateGeometryError

KMH = 1000.0 / 3600.0

# UAS-R parameter preset
TRAIN_MAX_SPEED = 350.0 * KMH
UAV_ALTITUDE_RANGE = (100.0, 500.0)
UAV_DEFAULT_ALTITUDE = 300.0
UAV_DEFAULT_ENDURANCE = 3.0 * 3600.0
UAV_DEFAULT_RANGE = 75_000.0
# must exceed the train ceiling or a trailing UAV never catches up
UAV_DEFAULT_MAX_SPEED = 400.0 * KMH

TRAIN_ANTENNA_HEIGHT = 4.0

def _evolve(obj, **changes):
    """``dataclasses.replace`` without re-running ``__post_init__``; for per-tick updates
    that preserve the invariants by construction."""
    new = object.__new__(type(obj))
    d = new.__dict__
    d.update(obj.__dict__)
    d.update(changes)
    return new


Point2 = Tuple[float, float]
Point3 = Tuple[float, float, float]


@dataclass(frozen=True)
class Station:
    position: float
    dwell: float = 120.0


@dataclass(frozen=True)
class TrackPath:
    """A polyline track with stations placed by arc length."""

    id: str
    vertices: Tuple[Point2, ...]
    stations: Tuple[Station, ...] = ()
    directions: Tuple[str, str] = ("down", "up")
    _cumulative: Tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 2:
            raise ConfigurationError(f"track {self.id!r} needs at least 2 vertices")
        cum = [0.0]
        for (x0, y0), (x1, y1) in zip(verts, verts[1:]):
            seg = math.hypot(x1 - x0, y1 - y0)
            if seg <= 0.0:
                raise ConfigurationError(f"track {self.id!r} has repeated consecutive vertices")
            cum.append(cum[-1] + seg)
        stations = tuple(sorted(self.stations, key=lambda s: s.position))
        for st in stations:
            if not 0.0 <= st.position <= cum[-1]:
                raise ConfigurationError(
                    f"station at {st.position} m lies outside track {self.id!r} (length {cum[-1]:.3f} m)"
                )
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "_cumulative", tuple(cum))

    @property
    def length(self) -> float:
        return self._cumulative[-1]

    def _segment(self, s: float) -> int:
        cum = self._cumulative
        if len(cum) == 2:
            return 0
        i = bisect.bisect_right(cum, s) - 1
        return min(max(i, 0), len(cum) - 2)

    def point_at(self, s: float) -> Point2:
        cum = self._cumulative
        s = 0.0 if s < 0.0 else (cum[-1] if s > cum[-1] else s)
        i = self._segment(s)
        (x0, y0), (x1, y1) = self.vertices[i], self.vertices[i + 1]
        frac = (s - cum[i]) / (cum[i + 1] - cum[i])
        return (x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))

    def tangent_at(self, s: float, direction: int = 0) -> Point2:
        """Unit vector of travel at arc length ``s`` (segment direction)."""
        cum = self._cumulative
        s = 0.0 if s < 0.0 else (cum[-1] if s > cum[-1] else s)
        i = self._segment(s)
        if direction == 1 and i > 0 and s == self._cumulative[i]:
            i -= 1  # at a vertex, heading back uses the segment behind
        (x0, y0), (x1, y1) = self.vertices[i], self.vertices[i + 1]
        seg = self._cumulative[i + 1] - self._cumulative[i]
        tx, ty = (x1 - x0) / seg, (y1 - y0) / seg
        return (tx, ty) if direction == 0 else (-tx, -ty)

    def next_station(self, s: float, direction: int) -> Optional[Station]:
        """First station strictly ahead of ``s`` in the direction of travel."""
        eps = 1e-9
        if direction == 0:
            for st in self.stations:
                if st.position > s + eps:
                    return st
        else:
            for st in reversed(self.stations):
                if st.position < s - eps:
                    return st
        return None

    def nearest_station(self, s: float) -> Optional[Station]:
        if not self.stations:
            return None
        return min(self.stations, key=lambda st: (abs(st.position - s), st.position))


@dataclass(frozen=True)
class TrainState:
    id: str
    track: str
    position: float
    speed: float = 0.0
    direction: int = 0
    dwell_remaining: float = 0.0
    cruise_speed: Optional[float] = None
    v_max: float = TRAIN_MAX_SPEED

    def __post_init__(self):
        if self.cruise_speed is None:
            object.__setattr__(self, "cruise_speed", self.speed)
        if self.direction not in (0, 1):
            raise ValueError(f"train {self.id!r}: direction must be 0 or 1")
        if not 0.0 <= self.speed <= self.v_max + 1e-9:
            raise ValueError(f"train {self.id!r}: speed {self.speed} outside [0, {self.v_max}]")
        if self.dwell_remaining < 0.0:
            raise ValueError(f"train {self.id!r}: negative dwell")


@dataclass(frozen=True)
class TrainKinematics:
    accel: float = 1.0
    decel: float = 1.0


DEFAULT_KINEMATICS = TrainKinematics()


def advance_train(
    t: TrainState, track: TrackPath, dt: float, kin: TrainKinematics = DEFAULT_KINEMATICS
) -> TrainState:
    """Integrate one tick of train motion, including station stops."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t.track != track.id:
        raise ConfigurationError(f"train {t.id!r} is on track {t.track!r}, got {track.id!r}")

    if t.dwell_remaining > 0.0:
        left = t.dwell_remaining - dt
        return _evolve(t, dwell_remaining=left if left > 1e-9 else 0.0)

    sign = 1.0 if t.direction == 0 else -1.0
    v = t.speed
    if v > 0.0:
        st = track.next_station(t.position, t.direction)
        if st is not None:
            gap = abs(st.position - t.position)
            # start braking in the tick that would cross the braking point
            if gap - v * dt <= v * v / (2.0 * kin.decel):
                b = v * v / (2.0 * gap)
                if v / b <= dt:
                    return _evolve(t, position=st.position, speed=0.0, dwell_remaining=st.dwell)
                nv = v - b * dt
                return _evolve(t, position=t.position + sign * (v + nv) * 0.5 * dt, speed=nv)

    target = t.cruise_speed
    if v == target:
        nv, dist = v, v * dt
    elif v < target:
        ta = (target - v) / kin.accel
        if ta >= dt:
            nv = v + kin.accel * dt
            dist = (v + nv) * 0.5 * dt
        else:
            nv = target
            dist = (v + target) * 0.5 * ta + target * (dt - ta)
    else:
        ta = (v - target) / kin.decel
        if ta >= dt:
            nv = v - kin.decel * dt
            dist = (v + nv) * 0.5 * dt
        else:
            nv = target
            dist = (v + target) * 0.5 * ta + target * (dt - ta)

    pos = t.position + sign * dist
    if pos >= track.length:
        return _evolve(t, position=track.length, speed=0.0, cruise_speed=0.0)
    if pos <= 0.0 and sign < 0:
        return _evolve(t, position=0.0, speed=0.0, cruise_speed=0.0)
    return _evolve(t, position=pos, speed=nv)


def train_point(t: TrainState, track: TrackPath, height: float = TRAIN_ANTENNA_HEIGHT) -> Point3:
    x, y = track.point_at(t.position)
    return (x, y, height)


def train_velocity(t: TrainState, track: TrackPath) -> Point3:
    tx, ty = track.tangent_at(t.position, t.direction)
    return (tx * t.speed, ty * t.speed, 0.0)


def near_station(t: TrainState, track: TrackPath, zone: float, speed_ceiling: float) -> bool:
    """At a station (dwelling) or slow inside a station zone."""
    if t.dwell_remaining > 0.0:
        return True
    st = track.nearest_station(t.position)
    return st is not None and abs(st.position - t.position) <= zone and t.speed <= speed_ceiling


@dataclass(frozen=True)
class UavState:
    id: str
    position: Point3
    velocity: Point3 = (0.0, 0.0, 0.0)
    altitude: float = UAV_DEFAULT_ALTITUDE
    endurance: float = UAV_DEFAULT_ENDURANCE
    range: float = UAV_DEFAULT_RANGE
    train: Optional[str] = None
    replacement_inbound: bool = False
    airborne: bool = True
    v_max: float = UAV_DEFAULT_MAX_SPEED

    @property
    def xy(self) -> Point2:
        return (self.position[0], self.position[1])


@dataclass(frozen=True)
class TrackingControl:
    """Proportional pursuit with saturation.

    With ``matched_speed`` the UAV snaps overhead and copies the train velocity
    once inside the lock tolerance; otherwise the residual relative speed after
    lock is bounded by ``gain * lock_tolerance``.
    """

    gain: float = 0.5
    lock_tolerance: float = 10.0
    matched_speed: bool = True

    @property
    def residual_speed_bound(self) -> float:
        return 0.0 if self.matched_speed else self.gain * self.lock_tolerance


DEFAULT_TRACKING = TrackingControl()


def horizontal_offset(u: UavState, t: TrainState, track: TrackPath) -> float:
    x, y = track.point_at(t.position)
    return math.hypot(x - u.position[0], y - u.position[1])


def is_locked(u: UavState, t: TrainState, track: TrackPath, tolerance: float) -> bool:
    return horizontal_offset(u, t, track) <= tolerance


def uav_tracking_step(
    u: UavState,
    target: TrainState,
    track: TrackPath,
    dt: float,
    ctl: TrackingControl = DEFAULT_TRACKING,
) -> UavState:
    """Move ``u`` toward the point above ``target`` and burn endurance/range."""
    if u.train != target.id:
        raise ValueError(f"UAV {u.id!r} is not assigned to train {target.id!r}")
    tx, ty = track.point_at(target.position)
    tvx, tvy, _ = train_velocity(target, track)
    x, y, _ = u.position
    ox, oy = tx - x, ty - y
    off = math.hypot(ox, oy)

    if ctl.matched_speed and off <= ctl.lock_tolerance:
        nx, ny = tx, ty
        vx, vy = tvx, tvy
    else:
        vx, vy = tvx + ctl.gain * ox, tvy + ctl.gain * oy
        sp = math.hypot(vx, vy)
        if sp > u.v_max:
            # saturate, keeping the heading toward the train
            if off > 0.0:
                vx, vy = ox / off * u.v_max, oy / off * u.v_max
            else:
                vx, vy = vx / sp * u.v_max, vy / sp * u.v_max
        nx, ny = x + vx * dt, y + vy * dt

    moved = math.hypot(nx - x, ny - y)
    return _evolve(
        u,
        position=(nx, ny, u.altitude),
        velocity=(vx, vy, 0.0),
        endurance=u.endurance - dt,
        range=u.range - moved,
    )


def hover_step(u: UavState, dt: float) -> UavState:
    """Airborne with no train to follow: hold position, burn endurance."""
    if not u.airborne:
        return u
    return _evolve(u, velocity=(0.0, 0.0, 0.0), endurance=u.endurance - dt)


@dataclass(frozen=True)
class GroundStation:
    """Fibre-backhauled UAV controller with a steerable sector beam."""

    id: str
    position: Point2
    height: float = 30.0
    tx_power_dbm: float = 40.0
    beamwidth_deg: float = 10.0
    peak_gain_dbi: float = 18.0
    boresight_az_deg: float = 0.0
    boresight_el_deg: float = 0.0
    backhaul: bool = True

    def __post_init__(self):
        if not 0.0 < self.beamwidth_deg < 180.0:
            raise ValueError(f"GS {self.id!r}: beamwidth must be in (0, 180) degrees")
        if self.peak_gain_dbi < 0.0:
            raise ValueError(f"GS {self.id!r}: peak gain must be >= 0 dBi")

    @property
    def point(self) -> Point3:
        return (self.position[0], self.position[1], self.height)

    def steer(self, target: Point3) -> "GroundStation":
        dx, dy, dz = (target[0] - self.position[0], target[1] - self.position[1], target[2] - self.height)
        az = math.degrees(math.atan2(dy, dx))
        el = math.degrees(math.atan2(dz, math.hypot(dx, dy)))
        return replace(self, boresight_az_deg=az, boresight_el_deg=el)

    def boresight(self) -> Point3:
        az, el = math.radians(self.boresight_az_deg), math.radians(self.boresight_el_deg)
        return (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))


def slant_range_and_elevation(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """Distance from ``a`` to ``b`` and elevation of the ray above the horizontal at ``a``."""
    dx, dy, dz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    horiz = math.hypot(dx, dy)
    rng = math.hypot(horiz, dz)
    if rng == 0.0:
        raise DegenerateGeometryError(f"coincident points {tuple(a)}")
    return rng, math.degrees(math.atan2(dz, horiz))
