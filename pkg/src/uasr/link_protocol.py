"""Link protocol state machines: RSSI averaging, A2G handover, flight change,
vertical handover, A2A relay fallback and relay buffering.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .channel import ChannelParams, ChannelSample
from .errors import ProtocolError, SimulationAbort
from .world import TrackPath, TrainState, UavState, is_locked

_EPS = 1e-9


class LinkStatus(str, Enum):
    CONNECTED = "connected"
    DEGRADED = "degraded"
    INTERRUPTED = "interrupted"
    HANDOVER_IN_PROGRESS = "handover"
    RELAYED = "relayed"


class RssiWindow:
    """Sliding window of timestamped RSSI samples over ``(now - interval, now]``."""

    __slots__ = ("interval", "_t", "_v")

    def __init__(self, interval: float = 0.25, samples: Iterable[Tuple[float, float]] = ()):
        self.interval = interval
        self._t: Deque[float] = deque()
        self._v: Deque[float] = deque()
        for t, v in samples:
            self._t.append(t)
            self._v.append(v)

    @property
    def samples(self) -> List[Tuple[float, float]]:
        return list(zip(self._t, self._v))

    def clear(self) -> None:
        self._t.clear()
        self._v.clear()

    def push(self, now: float, rssi_dbm: float) -> None:
        if self._t and now < self._t[-1]:
            raise ProtocolError(f"RSSI sample at {now} s arrived after {self._t[-1]} s")
        t = self._t
        v = self._v
        t.append(now)
        v.append(rssi_dbm)
        cutoff = now - self.interval + _EPS
        while t and t[0] <= cutoff:
            t.popleft()
            v.popleft()

    def evict(self, now: float) -> None:
        cutoff = now - self.interval + _EPS
        t = self._t
        while t and t[0] <= cutoff:
            t.popleft()
            self._v.popleft()

    @property
    def mean(self) -> float:
        v = self._v
        if not v:
            return float("-inf")
        return sum(v) / len(v)

    def __len__(self):
        return len(self._t)


@dataclass
class LinkState:
    endpoints: Tuple[str, str]
    serving: Optional[str] = None
    status: LinkStatus = LinkStatus.CONNECTED
    avg_rssi_dbm: float = float("-inf")
    window: RssiWindow = field(default_factory=RssiWindow)
    entered_at: float = 0.0
    sinr_db: float = float("inf")
    blocked: bool = False
    last_handover_at: float = float("-inf")

    def set_status(self, status: LinkStatus, now: float) -> None:
        if status is not self.status:
            self.status = status
            self.entered_at = now


def update_rssi_window(ls: LinkState, sample: ChannelSample, now: float, update_interval: float) -> LinkState:
    """Append ``sample``, drop samples older than the interval, refresh the mean."""
    ls.window.interval = update_interval
    ls.window.push(now, sample.rssi_dbm)
    ls.avg_rssi_dbm = ls.window.mean
    ls.sinr_db = sample.sinr_db
    ls.blocked = sample.blocked
    return ls


def is_interrupted(ls: LinkState, params: ChannelParams) -> bool:
    return ls.blocked or ls.avg_rssi_dbm < params.sensitivity_dbm or ls.sinr_db < params.min_sinr_db


# ---------------------------------------------------------------- handover


class HandoverAction(str, Enum):
    STAY = "stay"
    HANDOVER = "handover"
    INTERRUPT = "interrupt"


@dataclass(frozen=True)
class HandoverDecision:
    action: HandoverAction
    target: Optional[str] = None


STAY = HandoverDecision(HandoverAction.STAY)
INTERRUPT = HandoverDecision(HandoverAction.INTERRUPT)


@dataclass(frozen=True)
class HandoverRule:
    threshold_dbm: float = -80.0
    entry_threshold_dbm: float = -75.0
    guard_s: float = 1.0

    @classmethod
    def from_params(cls, channel: ChannelParams, hysteresis_db: float = 5.0, guard_s: float = 1.0):
        thr = channel.handover_threshold_dbm
        return cls(threshold_dbm=thr, entry_threshold_dbm=thr + hysteresis_db, guard_s=guard_s)


def best_candidate(candidates: Iterable[Tuple[str, float]], rule: HandoverRule, exclude: Optional[str] = None):
    """Strongest candidate at or above the entry threshold; ties go to the lowest id."""
    best = None
    for sid, rssi in candidates:
        if sid == exclude or rssi < rule.entry_threshold_dbm:
            continue
        if best is None or rssi > best[1] or (rssi == best[1] and sid < best[0]):
            best = (sid, rssi)
    return best


def evaluate_handover(
    ls: LinkState,
    candidates: Iterable[Tuple[str, float]],
    rule: HandoverRule,
    now: Optional[float] = None,
) -> HandoverDecision:
    if ls.avg_rssi_dbm >= rule.threshold_dbm:
        return STAY
    if now is not None and now - ls.last_handover_at < rule.guard_s - _EPS and ls.status is not LinkStatus.INTERRUPTED:
        return STAY
    best = best_candidate(candidates, rule, exclude=ls.serving)
    if best is None:
        return INTERRUPT
    return HandoverDecision(HandoverAction.HANDOVER, best[0])


# ------------------------------------------------------------ associations


@dataclass
class AssociationTable:
    """Who serves whom.

    ``serving_uav`` maps train -> UAV. ``uplink`` maps a mobile (UAV, or train in
    the cellular baseline) -> GS/BS id, or -> relay UAV id when the mobile is in
    ``relayed``. ``pending`` maps an outgoing UAV -> its inbound replacement.
    """

    serving_uav: Dict[str, str] = field(default_factory=dict)
    uplink: Dict[str, str] = field(default_factory=dict)
    relayed: Set[str] = field(default_factory=set)
    pending: Dict[str, str] = field(default_factory=dict)

    def copy(self) -> "AssociationTable":
        return AssociationTable(dict(self.serving_uav), dict(self.uplink), set(self.relayed), dict(self.pending))

    def train_of(self, uav: str) -> Optional[str]:
        for t, u in self.serving_uav.items():
            if u == uav:
                return t
        return None

    def check(self) -> None:
        servers = list(self.serving_uav.values())
        if len(servers) != len(set(servers)):
            raise SimulationAbort(f"a UAV serves more than one train: {self.serving_uav}")
        inbound = set(self.pending.values())
        if inbound & set(servers):
            raise SimulationAbort(f"an inbound replacement is already serving: {self.pending}")
        for m in self.relayed:
            if self.uplink.get(m) in self.relayed:
                raise SimulationAbort(f"relay chain through {m}")


@dataclass(frozen=True)
class HandoverEvent:
    time: float
    kind: str
    mobile: str
    source: Optional[str]
    target: Optional[str]
    mode: str = "soft"
    dropped_bytes: int = 0
    buffered_bytes: int = 0


# ---------------------------------------------------------------- buffering


@dataclass
class RelayBuffer:
    """FIFO of ``[flow, bytes, enqueued_at]`` items with a byte capacity."""

    owner: Optional[str]
    capacity: int
    items: Deque[list] = field(default_factory=deque)
    occupancy: int = 0
    dropped: int = 0

    def by_flow(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for flow, n, _ in self.items:
            out[flow] = out.get(flow, 0) + n
        return out


def buffer_enqueue(buf: RelayBuffer, nbytes: int, now: float, flow: str = "") -> int:
    """Queue what fits; returns the overflow that was dropped."""
    nbytes = int(nbytes)
    accepted = min(nbytes, buf.capacity - buf.occupancy)
    if accepted > 0:
        buf.items.append([flow, accepted, now])
        buf.occupancy += accepted
    over = nbytes - max(accepted, 0)
    buf.dropped += over
    return over


def buffer_drain(
    buf: RelayBuffer, budget: int, now: float, flows: Optional[Set[str]] = None
) -> List[Tuple[str, int, float]]:
    """Deliver up to ``budget`` bytes FIFO; returns ``(flow, bytes, queued_s)`` chunks.

    With ``flows``, only items of those flows are eligible; FIFO order is kept
    among them.
    """
    out = []
    if budget <= 0 or not buf.items:
        return out
    kept: Deque[list] = deque()
    items = buf.items
    while items:
        item = items.popleft()
        if budget > 0 and (flows is None or item[0] in flows):
            n = min(item[1], budget)
            out.append((item[0], n, now - item[2]))
            budget -= n
            buf.occupancy -= n
            item[1] -= n
            if item[1] > 0:
                kept.append(item)
        else:
            kept.append(item)
    buf.items = kept
    return out


def execute_handover(
    assoc: AssociationTable,
    decision: HandoverDecision,
    mode: str,
    *,
    mobile: str,
    now: float,
    kind: str = "a2g",
    in_flight: Optional[Mapping[str, int]] = None,
    buffer: Optional[RelayBuffer] = None,
    target_rssi_dbm: Optional[float] = None,
    rule: Optional[HandoverRule] = None,
) -> Tuple[AssociationTable, Optional[HandoverEvent]]:
    """Move ``mobile``'s uplink to the decision's target.

    Soft mode is make-before-break: in-flight bytes go to ``buffer`` and are
    delivered over the new link. Hard mode releases first; in-flight bytes are
    dropped.
    """
    if decision.action is not HandoverAction.HANDOVER:
        raise ProtocolError("execute_handover needs a Handover decision")
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown handover mode {mode!r}")
    source = assoc.uplink.get(mobile)
    if decision.target == source:
        return assoc, None
    if target_rssi_dbm is not None and rule is not None and target_rssi_dbm < rule.entry_threshold_dbm:
        return assoc, None  # stale target; re-evaluated next tick

    dropped = buffered = 0
    for flow, n in sorted((in_flight or {}).items()):
        if mode == "soft" and buffer is not None:
            over = buffer_enqueue(buffer, n, now, flow)
            buffered += n - over
            dropped += over
        else:
            dropped += n

    new = assoc.copy()
    new.uplink[mobile] = decision.target
    new.relayed.discard(mobile)
    return new, HandoverEvent(now, kind, mobile, source, decision.target, mode, dropped, buffered)


# ------------------------------------------------------------ flight change


@dataclass(frozen=True)
class FlightPolicy:
    endurance_reserve: float
    endurance_floor: float
    range_reserve: float
    range_floor: float
    lock_tolerance: float = 10.0

    @classmethod
    def from_fractions(
        cls,
        max_endurance: float,
        max_range: float,
        reserve: float = 0.10,
        floor: float = 0.02,
        lock_tolerance: float = 10.0,
    ) -> "FlightPolicy":
        return cls(
            endurance_reserve=reserve * max_endurance,
            endurance_floor=floor * max_endurance,
            range_reserve=reserve * max_range,
            range_floor=floor * max_range,
            lock_tolerance=lock_tolerance,
        )


def needs_flight_change(u: UavState, policy: FlightPolicy) -> bool:
    return u.endurance < policy.endurance_reserve or u.range < policy.range_reserve


def below_floor(u: UavState, policy: FlightPolicy) -> bool:
    return u.endurance < policy.endurance_floor or u.range < policy.range_floor


def flight_change(
    assoc: AssociationTable,
    old: UavState,
    new: Optional[UavState],
    train: TrainState,
    track: TrackPath,
    policy: FlightPolicy,
    *,
    at_station: bool = False,
) -> AssociationTable:
    """Advance the replacement of ``old`` by ``new`` for ``train`` by one tick.

    Dispatch registers the pending pair. The server switches once the
    replacement is locked and the train is at a station, or at once if the
    outgoing UAV hits its hard floor. Hitting the floor before the replacement
    locks (or with no replacement) releases the old UAV and leaves the train
    unserved until a lock.
    """
    serving = assoc.serving_uav.get(train.id) == old.id
    if serving and not needs_flight_change(old, policy):
        return assoc
    out = assoc.copy()
    floor = below_floor(old, policy)

    if new is None:
        if serving and floor:
            del out.serving_uav[train.id]
            out.uplink.pop(old.id, None)
            out.relayed.discard(old.id)
        return out if out != assoc else assoc

    out.pending.setdefault(old.id, new.id)
    locked = is_locked(new, train, track, policy.lock_tolerance)
    if locked and (at_station or floor or not serving):
        out.serving_uav[train.id] = new.id
        out.pending.pop(old.id, None)
        out.uplink.pop(old.id, None)
        out.relayed.discard(old.id)
    elif serving and floor:
        del out.serving_uav[train.id]
        out.uplink.pop(old.id, None)
        out.relayed.discard(old.id)
    return out


# --------------------------------------------------------- vertical handover


@dataclass(frozen=True)
class StationNetwork:
    id: str
    track: str
    position: float
    radius: float = 1000.0
    capacity_bps: float = 100.0e6
    latency_s: float = 0.020


def vertical_handover(
    train: TrainState, station_networks: Iterable[StationNetwork], speed_ceiling: float = 10.0
) -> Optional[str]:
    """Station network that should carry the train's user traffic now, if any."""
    if train.speed > speed_ceiling:
        return None
    hits = [
        n.id
        for n in station_networks
        if n.track == train.track and abs(n.position - train.position) <= n.radius
    ]
    return min(hits) if hits else None


# ------------------------------------------------------------- A2A failover


def a2a_failover(
    assoc: AssociationTable,
    failed_uav: UavState,
    neighbors: Iterable[UavState],
    a2a_range: float,
) -> AssociationTable:
    """Relay ``failed_uav`` through the nearest neighbour in A2A range.

    ``neighbors`` must already be restricted to UAVs whose own A2G link is
    healthy; ties on distance go to the lowest id.
    """
    fx, fy, fz = failed_uav.position
    best = None
    for n in neighbors:
        if n.id == failed_uav.id:
            continue
        d = math.dist((fx, fy, fz), n.position)
        if d > a2a_range:
            continue
        if best is None or (d, n.id) < best:
            best = (d, n.id)
    if best is None:
        return assoc
    out = assoc.copy()
    out.uplink[failed_uav.id] = best[1]
    out.relayed.add(failed_uav.id)
    return out


def restore_direct(assoc: AssociationTable, uav: str, station: str) -> AssociationTable:
    out = assoc.copy()
    out.uplink[uav] = station
    out.relayed.discard(uav)
    return out
