"""Scenario documents: TOML text <-> validated ``Scenario`` objects.

The document is sectioned key/value text. Omitted keys take defaults; the UAV
ones sit inside the UAS-R preset envelope (1-5 h aloft, 50-100 km of range).
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import re
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import tomli
import tomli_w

from .channel import ChannelParams
from .errors import ScenarioError
from .resource import ACCESS_MODES
from .world import (
    KMH,
    TRAIN_MAX_SPEED,
    UAV_ALTITUDE_RANGE,
    UAV_DEFAULT_ALTITUDE,
    UAV_DEFAULT_ENDURANCE,
    UAV_DEFAULT_MAX_SPEED,
    UAV_DEFAULT_RANGE,
)

MODES = ("uasr", "cellular-baseline")
FLOW_CLASSES = ("control", "measurement", "user")
FAULT_KINDS = ("gs_outage", "los_block")

# informational preset values carried into summaries
PRESET_PAYLOAD_KG = 20.0
PRESET_DATA_RATE_TARGET_BPS = 1000e6


@dataclass
class StationSpec:
    position: float
    dwell: float = 120.0


@dataclass
class TrackSpec:
    id: str
    vertices: List[Tuple[float, float]]
    stations: List[StationSpec] = field(default_factory=list)
    directions: Tuple[str, str] = ("down", "up")


@dataclass
class TrainSpec:
    id: str
    track: str
    position: float = 0.0
    speed: float = 300.0 * KMH
    direction: int = 0
    cruise_speed: Optional[float] = None
    v_max: float = TRAIN_MAX_SPEED


@dataclass
class UavSpec:
    id: str
    train: Optional[str] = None
    position: Optional[Tuple[float, float]] = None
    altitude: float = UAV_DEFAULT_ALTITUDE
    endurance: float = UAV_DEFAULT_ENDURANCE
    range: float = UAV_DEFAULT_RANGE
    max_endurance: Optional[float] = None
    max_range: Optional[float] = None
    airborne: bool = True
    v_max: float = UAV_DEFAULT_MAX_SPEED


@dataclass
class GroundStationSpec:
    id: str
    position: Tuple[float, float]
    height: float = 30.0
    tx_power_dbm: float = 40.0
    beamwidth_deg: float = 10.0
    peak_gain_dbi: float = 18.0


@dataclass
class StationNetworkSpec:
    id: str
    track: str
    position: float
    radius: float = 1000.0
    capacity_bps: float = 100.0e6
    latency_s: float = 0.020


@dataclass
class WorldSpec:
    tracks: List[TrackSpec] = field(default_factory=list)
    trains: List[TrainSpec] = field(default_factory=list)
    uavs: List[UavSpec] = field(default_factory=list)
    ground_stations: List[GroundStationSpec] = field(default_factory=list)
    station_networks: List[StationNetworkSpec] = field(default_factory=list)
    strict_preset: bool = False


@dataclass
class ProtocolParams:
    hysteresis_db: float = 5.0
    handover_mode: str = "soft"
    dwell_guard_s: float = 1.0
    hard_gap_ticks: int = 1
    a2a_range_m: float = 30_000.0
    a2a_beacon_bytes: int = 256
    a2a_beacon_period_s: float = 1.0
    vertical_speed_ceiling: float = 10.0
    station_zone_m: float = 1000.0
    endurance_reserve: float = 0.10
    endurance_floor: float = 0.02
    range_reserve: float = 0.10
    range_floor: float = 0.02
    buffer_capacity_bytes: int = 64_000_000
    lock_tolerance_m: float = 10.0
    tracking_gain: float = 0.5
    matched_speed: bool = True
    train_accel: float = 1.0
    train_decel: float = 1.0


@dataclass
class ResourceParams:
    total_bandwidth_hz: float = 400.0e6
    access_mode: str = "tdma"
    slot_s: float = 0.010
    walsh_order: int = 0  # 0: smallest order that fits
    sdma_beamwidth_deg: float = 10.0
    sdma_gain_dbi: float = 25.0


@dataclass
class FlowSpec:
    id: str
    train: str
    cls: str = "user"
    rate_bps: float = 10.0e6
    jitter: float = 0.0


@dataclass
class TrafficSpec:
    flows: List[FlowSpec] = field(default_factory=list)


@dataclass
class FaultSpec:
    kind: str
    target: str
    start: float
    duration: float


@dataclass
class EngineParams:
    dt: float = 0.1
    end_time: float = 60.0
    update_interval: float = 0.25
    uav_processing_s: float = 0.020
    hst_processing_s: float = 0.040
    faults: List[FaultSpec] = field(default_factory=list)


@dataclass
class CellularParams:
    bs_spacing_m: float = 3000.0
    bs_offset_m: float = 50.0
    bs_height_m: float = 30.0
    tx_power_dbm: float = 43.0
    gain_dbi: float = 15.0
    train_gain_dbi: float = 0.0
    reuse: int = 3
    threshold_dbm: Optional[float] = None  # None: RSSI at the cell midpoint
    processing_s: float = 0.020


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "uasr"
    world: WorldSpec = field(default_factory=WorldSpec)
    channel: ChannelParams = field(default_factory=ChannelParams)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    resource: ResourceParams = field(default_factory=ResourceParams)
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    engine: EngineParams = field(default_factory=EngineParams)
    cellular: CellularParams = field(default_factory=CellularParams)
    warnings: List[str] = field(default_factory=list, compare=False, repr=False)

    @property
    def n_ticks(self) -> int:
        return int(round(self.engine.end_time / self.engine.dt))


# field renames between document keys and attributes
_KEY_ALIASES = {"class": "cls"}
_ATTR_ALIASES = {v: k for k, v in _KEY_ALIASES.items()}


def _is_optional(tp) -> Tuple[bool, Any]:
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return True, args[0]
    return False, tp


def _coerce(tp, value, path: str, errors: list):
    optional, tp = _is_optional(tp)
    if value is None:
        if optional:
            return None
        errors.append((path, "value required"))
        return None
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            errors.append((path, f"expected a table, got {type(value).__name__}"))
            return None
        return _build(tp, value, path, errors)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            errors.append((path, f"expected an array, got {type(value).__name__}"))
            return None
        args = typing.get_args(tp)
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(value) != len(args):
                errors.append((path, f"expected {len(args)} elements, got {len(value)}"))
                return None
            return tuple(_coerce(a, v, f"{path}[{i}]", errors) for i, (a, v) in enumerate(zip(args, value)))
        inner = args[0] if args else Any
        items = [_coerce(inner, v, f"{path}[{i}]", errors) for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if tp is bool:
        if not isinstance(value, bool):
            errors.append((path, "expected true or false"))
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append((path, f"expected a number, got {value!r}"))
            return None
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append((path, f"expected an integer, got {value!r}"))
            return None
        return value
    if tp is str:
        if not isinstance(value, str):
            errors.append((path, f"expected a string, got {value!r}"))
            return None
        return value
    return value


def _build(cls, data: Dict[str, Any], path: str, errors: list):
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls) if f.init and f.name != "warnings"}
    kwargs = {}
    for key, value in data.items():
        attr = _KEY_ALIASES.get(key, key)
        sub = f"{path}.{key}" if path else key
        if attr not in names:
            errors.append((sub, "unknown key"))
            continue
        kwargs[attr] = _coerce(hints[attr], value, sub, errors)
    for name, f in names.items():
        if name not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            errors.append((f"{path}.{_ATTR_ALIASES.get(name, name)}" if path else name, "missing required key"))
            kwargs[name] = None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append((path or "<root>", str(exc)))
        return None


_LINE_COL = re.compile(r"\(at line (\d+), column (\d+)\)")


def parse_and_validate(text: str) -> Scenario:
    """Parse and validate; raises ScenarioError listing every problem found."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = _LINE_COL.search(str(exc))
        where = f"line {m.group(1)}, column {m.group(2)}" if m else "unknown position"
        raise ScenarioError([(f"<syntax {where}>", str(exc))]) from None
    errors: list = []
    scn = _build(Scenario, data, "", errors)
    if scn is None or errors:
        raise ScenarioError(errors)
    errors, warnings = validate(scn)
    if errors:
        raise ScenarioError(errors)
    scn.warnings = warnings
    return scn


def _multiple(a: float, b: float) -> bool:
    q = a / b
    return abs(q - round(q)) < 1e-9 * max(1.0, abs(q))


def validate(scn: Scenario) -> Tuple[List[Tuple[str, str]], List[str]]:
    """Semantic checks over a structurally valid scenario: ``(errors, warnings)``."""
    errs: List[Tuple[str, str]] = []
    warns: List[str] = []
    w = scn.world

    if scn.mode not in MODES:
        errs.append(("mode", f"must be one of {MODES}"))

    seen: Dict[str, str] = {}
    groups = [
        ("world.tracks", w.tracks),
        ("world.trains", w.trains),
        ("world.uavs", w.uavs),
        ("world.ground_stations", w.ground_stations),
        ("world.station_networks", w.station_networks),
        ("traffic.flows", scn.traffic.flows),
    ]
    for gpath, items in groups:
        for i, item in enumerate(items):
            p = f"{gpath}[{i}].id"
            if not item.id:
                errs.append((p, "empty id"))
            elif item.id in seen:
                errs.append((p, f"duplicate id {item.id!r} (also at {seen[item.id]})"))
            else:
                seen[item.id] = p

    lengths = {}
    for i, t in enumerate(w.tracks):
        p = f"world.tracks[{i}]"
        if len(t.vertices) < 2:
            errs.append((f"{p}.vertices", "needs at least 2 vertices"))
            continue
        length = 0.0
        for j, (a, b) in enumerate(zip(t.vertices, t.vertices[1:])):
            seg = math.dist(a, b)
            if seg <= 0.0:
                errs.append((f"{p}.vertices[{j + 1}]", "repeats the previous vertex"))
            length += seg
        lengths[t.id] = length
        for j, st in enumerate(t.stations):
            if not 0.0 <= st.position <= length:
                errs.append((f"{p}.stations[{j}].position", f"outside [0, {length:.3f}] m"))
            if st.dwell < 0.0:
                errs.append((f"{p}.stations[{j}].dwell", "must be >= 0"))

    train_ids = {t.id for t in w.trains}
    for i, t in enumerate(w.trains):
        p = f"world.trains[{i}]"
        if t.track not in lengths:
            errs.append((f"{p}.track", f"unknown track {t.track!r}"))
        elif not 0.0 <= t.position <= lengths[t.track]:
            errs.append((f"{p}.position", f"outside [0, {lengths[t.track]:.3f}] m"))
        if t.direction not in (0, 1):
            errs.append((f"{p}.direction", "must be 0 or 1"))
        if not 0.0 <= t.speed <= t.v_max:
            errs.append((f"{p}.speed", f"must be in [0, {t.v_max:.3f}] m/s"))
        if t.cruise_speed is not None and not 0.0 <= t.cruise_speed <= t.v_max:
            errs.append((f"{p}.cruise_speed", f"must be in [0, {t.v_max:.3f}] m/s"))

    served: Dict[str, str] = {}
    lo, hi = UAV_ALTITUDE_RANGE
    for i, u in enumerate(w.uavs):
        p = f"world.uavs[{i}]"
        if u.train is not None:
            if u.train not in train_ids:
                errs.append((f"{p}.train", f"unknown train {u.train!r}"))
            elif u.train in served:
                errs.append((f"{p}.train", f"train {u.train!r} already served by {served[u.train]!r}"))
            else:
                served[u.train] = u.id
            if not u.airborne:
                errs.append((f"{p}.airborne", "a UAV serving a train must be airborne"))
        elif u.position is None:
            errs.append((f"{p}.position", "required when the UAV serves no train"))
        if u.altitude <= 0.0:
            errs.append((f"{p}.altitude", "must be positive"))
        elif not lo <= u.altitude <= hi:
            msg = f"{p}.altitude: {u.altitude} m outside the UAS-R range {lo:.0f}-{hi:.0f} m"
            warns.append(msg)
        if u.endurance <= 0.0:
            errs.append((f"{p}.endurance", "must be positive"))
        if u.range <= 0.0:
            errs.append((f"{p}.range", "must be positive"))
        if u.v_max <= 0.0:
            errs.append((f"{p}.v_max", "must be positive"))
        if w.strict_preset:
            if not 3600.0 <= (u.max_endurance or u.endurance) <= 5 * 3600.0:
                warns.append(f"{p}.endurance: outside the UAS-R range 1-5 h")
            if not 50e3 <= (u.max_range or u.range) <= 100e3:
                warns.append(f"{p}.range: outside the UAS-R range 50-100 km")
    if not w.strict_preset:
        # only strict mode reports departures from the preset
        warns = [m for m in warns if "UAS-R range" not in m]

    for i, g in enumerate(w.ground_stations):
        p = f"world.ground_stations[{i}]"
        if not 0.0 < g.beamwidth_deg < 180.0:
            errs.append((f"{p}.beamwidth_deg", "must be in (0, 180)"))
        if g.peak_gain_dbi < 0.0:
            errs.append((f"{p}.peak_gain_dbi", "must be >= 0"))
        if g.height < 0.0:
            errs.append((f"{p}.height", "must be >= 0"))

    for i, n in enumerate(w.station_networks):
        p = f"world.station_networks[{i}]"
        if n.track not in lengths:
            errs.append((f"{p}.track", f"unknown track {n.track!r}"))
        if n.radius <= 0.0:
            errs.append((f"{p}.radius", "must be positive"))
        if n.capacity_bps < 0.0:
            errs.append((f"{p}.capacity_bps", "must be >= 0"))

    for i, f in enumerate(scn.traffic.flows):
        p = f"traffic.flows[{i}]"
        if f.train not in train_ids:
            errs.append((f"{p}.train", f"unknown train {f.train!r}"))
        if f.cls not in FLOW_CLASSES:
            errs.append((f"{p}.class", f"must be one of {FLOW_CLASSES}"))
        if f.rate_bps < 0.0:
            errs.append((f"{p}.rate_bps", "must be >= 0"))
        if not 0.0 <= f.jitter < 1.0:
            errs.append((f"{p}.jitter", "must be in [0, 1)"))

    e = scn.engine
    if not e.dt >= 0.01 - 1e-12:
        errs.append(("engine.dt", "must be >= 0.01 s"))
    if e.end_time < 0.0:
        errs.append(("engine.end_time", "must be >= 0"))
    elif e.dt > 0 and not _multiple(e.end_time, e.dt):
        errs.append(("engine.end_time", "must be an integer number of ticks"))
    if e.update_interval <= 0.0:
        errs.append(("engine.update_interval", "must be positive"))
    elif e.dt > 0 and not _multiple(e.update_interval, e.dt):
        warns.append(
            f"engine.update_interval: {e.update_interval} s is not a whole number of {e.dt} s ticks; "
            "the window holds the samples inside (now - interval, now]"
        )
    if e.uav_processing_s < 0.0 or e.hst_processing_s < 0.0:
        errs.append(("engine", "processing times must be >= 0"))
    targets = set(seen) | {f"{a}>{b}" for a in seen for b in seen}
    for i, fl in enumerate(e.faults):
        p = f"engine.faults[{i}]"
        if fl.kind not in FAULT_KINDS:
            errs.append((f"{p}.kind", f"must be one of {FAULT_KINDS}"))
        if fl.target not in targets:
            errs.append((f"{p}.target", f"unknown entity or link {fl.target!r}"))
        if fl.duration < 0.0 or fl.start < 0.0:
            errs.append((p, "start and duration must be >= 0"))

    pr = scn.protocol
    if pr.handover_mode not in ("soft", "hard"):
        errs.append(("protocol.handover_mode", "must be soft or hard"))
    if pr.hard_gap_ticks < 1:
        errs.append(("protocol.hard_gap_ticks", "must be >= 1"))
    if not 0.0 <= pr.endurance_floor <= pr.endurance_reserve < 1.0:
        errs.append(("protocol.endurance_reserve", "need 0 <= floor <= reserve < 1"))
    if not 0.0 <= pr.range_floor <= pr.range_reserve < 1.0:
        errs.append(("protocol.range_reserve", "need 0 <= floor <= reserve < 1"))
    if pr.buffer_capacity_bytes < 0:
        errs.append(("protocol.buffer_capacity_bytes", "must be >= 0"))
    if pr.tracking_gain <= 0.0 or pr.tracking_gain * e.dt >= 1.0:
        errs.append(("protocol.tracking_gain", "need 0 < gain * dt < 1"))

    r = scn.resource
    if r.total_bandwidth_hz <= 0.0:
        errs.append(("resource.total_bandwidth_hz", "must be positive"))
    if r.access_mode not in ACCESS_MODES:
        errs.append(("resource.access_mode", f"must be one of {ACCESS_MODES}"))
    if r.walsh_order and r.walsh_order & (r.walsh_order - 1):
        errs.append(("resource.walsh_order", "must be a power of two (0 for automatic)"))
    if r.slot_s <= 0.0:
        errs.append(("resource.slot_s", "must be positive"))

    c = scn.cellular
    if scn.mode == "cellular-baseline":
        if c.bs_spacing_m <= 0.0:
            errs.append(("cellular.bs_spacing_m", "must be positive"))
        if c.reuse < 1:
            errs.append(("cellular.reuse", "must be >= 1"))

    return errs, warns


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            if f.name == "warnings" or not f.init:
                continue
            v = getattr(obj, f.name)
            if v is None:
                continue
            out[_ATTR_ALIASES.get(f.name, f.name)] = _to_plain(v)
        return out
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def serialize(scn: Scenario) -> str:
    """Canonical text form; every field is written, so defaults are explicit."""
    return tomli_w.dumps(_to_plain(scn))


def canonical(scn: Scenario) -> Scenario:
    """Same scenario with every entity list in id order.

    The engine never depends on list order, so the digest should not either.
    """
    w = scn.world
    tracks = [
        dataclasses.replace(t, stations=sorted(t.stations, key=lambda s: (s.position, s.dwell)))
        for t in sorted(w.tracks, key=lambda t: t.id)
    ]
    world = dataclasses.replace(
        w,
        tracks=tracks,
        trains=sorted(w.trains, key=lambda t: t.id),
        uavs=sorted(w.uavs, key=lambda u: u.id),
        ground_stations=sorted(w.ground_stations, key=lambda g: g.id),
        station_networks=sorted(w.station_networks, key=lambda n: n.id),
    )
    faults = sorted(scn.engine.faults, key=lambda f: (f.start, f.kind, f.target, f.duration))
    return dataclasses.replace(
        scn,
        world=world,
        traffic=dataclasses.replace(scn.traffic, flows=sorted(scn.traffic.flows, key=lambda f: f.id)),
        engine=dataclasses.replace(scn.engine, faults=faults),
    )


def digest(scn: Scenario) -> str:
    return hashlib.sha256(serialize(canonical(scn)).encode("utf-8")).hexdigest()


def load(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_and_validate(fh.read())
