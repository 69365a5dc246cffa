"""Fixed-tick simulation core.

One ``Simulation`` owns the whole mutable state of a run. ``step`` advances it
by one tick through eight ordered phases; every loop over entities runs in
sorted-id order so insertion order in the scenario never matters.
"""

from __future__ import annotations

import gc
import logging
import math
import random
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from .channel import (
    SPEED_OF_LIGHT,
    Beam,
    ChannelParams,
    ChannelSample,
    LinkKind,
    NodeKind,
    RadioNode,
    doppler_shift,
    fspl_db,
    multipath_penalty,
    sample_link,
    unit_vector,
)
from .errors import SimulationAbort
from .link_protocol import (
    AssociationTable,
    FlightPolicy,
    HandoverAction,
    HandoverDecision,
    HandoverEvent,
    HandoverRule,
    LinkState,
    LinkStatus,
    RelayBuffer,
    RssiWindow,
    StationNetwork,
    a2a_failover,
    best_candidate,
    buffer_drain,
    buffer_enqueue,
    evaluate_handover,
    execute_handover,
    flight_change,
    is_interrupted,
    needs_flight_change,
    restore_direct,
    update_rssi_window,
    vertical_handover,
)
from .metrics import (
    HANDOVER_KINDS,
    OUTAGE_STATES,
    RECORD_SCHEMA_VERSION,
    MetricsReport,
    delay_stats,
    event_record,
    link_record,
    path_record,
)
from .resource import (
    BeamSchedule,
    assign_codes,
    bands_overlap,
    build_frequency_plan,
    predict_position,
    sdma_beam_step,
    slot_owners,
    slots_per_tick,
    smallest_order,
)
from .scenario import Scenario, PRESET_DATA_RATE_TARGET_BPS, PRESET_PAYLOAD_KG
from .world import (
    GroundStation,
    Station,
    TrackingControl,
    TrackPath,
    TrainKinematics,
    TrainState,
    UavState,
    advance_train,
    hover_step,
    near_station,
    slant_range_and_elevation,
    train_point,
    train_velocity,
    uav_tracking_step,
)

log = logging.getLogger(__name__)

_EPS = 1e-9
_NEG_INF = float("-inf")


# ------------------------------------------------------------------ delays


class DelayBudget(NamedTuple):
    propagation: float
    uav_processing: float
    hst_processing: float
    queuing: float
    total: float


def compute_delay(
    hops: Sequence[float],
    *,
    relayed: bool = False,
    queuing: float = 0.0,
    uav_processing: float = 0.020,
    hst_processing: float = 0.040,
) -> DelayBudget:
    """One-way delay over a path of hop ranges (m).

    A relayed path crosses one more UAV, so UAV processing counts twice.
    """
    if not hops:
        raise ValueError("no path: delay is undefined")
    prop = math.fsum(hops) / SPEED_OF_LIGHT
    uav = uav_processing * 2.0 if relayed else uav_processing
    return DelayBudget(prop, uav, hst_processing, queuing, prop + uav + hst_processing + queuing)


# ------------------------------------------------------------------- clock


@dataclass
class SimulationClock:
    dt: float = 0.1
    update_interval: float = 0.25
    end_time: float = 0.0
    n: int = 0

    @property
    def time(self) -> float:
        return self.n * self.dt

    @property
    def n_ticks(self) -> int:
        return int(round(self.end_time / self.dt))


@dataclass
class TrafficFlow:
    id: str
    cls: str
    train: str
    rate_bps: float
    jitter: float = 0.0
    offered: int = 0
    delivered: int = 0
    dropped: int = 0
    buffered: int = 0
    carry: float = 0.0
    outage_ticks: int = 0
    delay_max: float = 0.0
    delays: List[float] = None

    def __post_init__(self):
        if self.delays is None:
            self.delays = []


class _Path(NamedTuple):
    state: str  # direct | relayed | vertical | cellular | interrupted | handover
    capacity: float
    hops: Tuple[float, ...]
    relayed: bool
    uav_processing: float
    chain: str


_NONE: frozenset = frozenset()
_NO_PATH = _Path("interrupted", 0.0, (), False, 0.0, "")
_PRIORITY = {"control": 0, "measurement": 1, "user": 2}


def _link_blocked(blocks: set, a: str, b: str) -> bool:
    return bool(blocks) and (a in blocks or b in blocks or f"{a}>{b}" in blocks or f"{b}>{a}" in blocks)


# -------------------------------------------------------------- simulation


class Simulation:
    """Mutable state of one run plus the tick pipeline."""

    def __init__(self, scenario: Scenario, seed: int = 0, *, keep_records: bool = True):
        self.scn = scenario
        self.seed = seed
        self.keep_records = keep_records
        self.rng = random.Random(seed)
        e, w, pr = scenario.engine, scenario.world, scenario.protocol
        self.ch: ChannelParams = scenario.channel
        self.cellular = scenario.mode == "cellular-baseline"
        self.clock = SimulationClock(e.dt, e.update_interval, e.end_time)
        self.kin = TrainKinematics(pr.train_accel, pr.train_decel)
        self.ctl = TrackingControl(pr.tracking_gain, pr.lock_tolerance_m, pr.matched_speed)

        self.tracks: Dict[str, TrackPath] = {
            t.id: TrackPath(t.id, tuple(t.vertices), tuple(Station(s.position, s.dwell) for s in t.stations), tuple(t.directions))
            for t in sorted(w.tracks, key=lambda t: t.id)
        }
        self.trains: Dict[str, TrainState] = {
            t.id: TrainState(t.id, t.track, t.position, t.speed, t.direction, 0.0, t.cruise_speed, t.v_max)
            for t in sorted(w.trains, key=lambda t: t.id)
        }
        self.train_ids = sorted(self.trains)
        self.uavs: Dict[str, UavState] = {}
        self.policies: Dict[str, FlightPolicy] = {}
        for u in sorted(w.uavs, key=lambda u: u.id):
            if u.train is not None:
                tr = self.trains[u.train]
                x, y = self.tracks[tr.track].point_at(tr.position)
            else:
                x, y = u.position
            self.uavs[u.id] = UavState(
                u.id, (x, y, u.altitude), (0.0, 0.0, 0.0), u.altitude, u.endurance, u.range, u.train,
                False, u.airborne or u.train is not None, u.v_max,
            )
            max_e = u.max_endurance if u.max_endurance is not None else u.endurance
            max_r = u.max_range if u.max_range is not None else u.range
            self.policies[u.id] = FlightPolicy(
                pr.endurance_reserve * max_e, pr.endurance_floor * max_e,
                pr.range_reserve * max_r, pr.range_floor * max_r, pr.lock_tolerance_m,
            )
        self.uav_ids = sorted(self.uavs)
        self.gss: Dict[str, GroundStation] = {
            g.id: GroundStation(g.id, tuple(g.position), g.height, g.tx_power_dbm, g.beamwidth_deg, g.peak_gain_dbi)
            for g in sorted(w.ground_stations, key=lambda g: g.id)
        }
        self.gs_ids = sorted(self.gss)
        self._a2g_noise = self.ch.noise_dbm(self.ch.a2g_bandwidth_hz)
        self._train_beam = Beam((0.0, 0.0, 1.0), self.ch.train_beamwidth_deg, self.ch.train_gain_dbi)
        self._gs_const = [(self.gss[g].point, self.gss[g].tx_power_dbm, self.gss[g].peak_gain_dbi) for g in self.gs_ids]
        self.nets = [
            StationNetwork(n.id, n.track, n.position, n.radius, n.capacity_bps, n.latency_s)
            for n in sorted(w.station_networks, key=lambda n: n.id)
        ]
        self.net_by_id = {n.id: n for n in self.nets}
        self.flows: Dict[str, TrafficFlow] = {
            f.id: TrafficFlow(f.id, f.cls, f.train, f.rate_bps, f.jitter)
            for f in sorted(scenario.traffic.flows, key=lambda f: f.id)
        }
        self.flows_of: Dict[str, List[TrafficFlow]] = {t: [] for t in self.train_ids}
        for f in self.flows.values():
            self.flows_of[f.train].append(f)
        for lst in self.flows_of.values():
            lst.sort(key=lambda f: (_PRIORITY[f.cls], f.id))
        self.faults = sorted(e.faults, key=lambda f: (f.start, f.kind, f.target))

        self.rule = HandoverRule.from_params(self.ch, pr.hysteresis_db, pr.dwell_guard_s)
        self.assoc = AssociationTable({u.train: u.id for u in self.uavs.values() if u.train})
        self.buffers = {t: RelayBuffer(self.assoc.serving_uav.get(t), pr.buffer_capacity_bytes) for t in self.train_ids}
        self.offload: Dict[str, Optional[str]] = {t: None for t in self.train_ids}
        self.gap_until: Dict[str, int] = {t: -1 for t in self.train_ids}

        # resources
        self.plan = build_frequency_plan(scenario.resource.total_bandwidth_hz, self.trains.values())
        self._check_plan()
        mode = scenario.resource.access_mode
        self.access_mode = mode
        self.n_slots = slots_per_tick(e.dt, scenario.resource.slot_s)
        if mode == "cdma":
            ents = self.train_ids + self.uav_ids
            order = scenario.resource.walsh_order or smallest_order(len(ents))
            self.codes = assign_codes(ents, order)
        else:
            self.codes = None
        self.predicted: Dict[str, float] = {}
        self.owners: Dict[int, List[str]] = {}
        self.share: Dict[str, float] = {}
        self._allocate(0)

        # per-link protocol state
        interval = e.update_interval
        self.windows: Dict[Tuple[str, str], RssiWindow] = {}
        self.qualified_since: Dict[Tuple[str, str], Optional[float]] = {}
        self.a2g: Dict[str, LinkState] = {}
        self.a2t: Dict[str, LinkState] = {}
        if not self.cellular:
            for u in self.uav_ids:
                for g in self.gs_ids:
                    self.windows[(u, g)] = RssiWindow(interval)
                    self.qualified_since[(u, g)] = None
                self.a2g[u] = LinkState((u, ""), None, LinkStatus.INTERRUPTED, window=RssiWindow(interval))
        # (gs, key, window) per UAV in GS order, for the per-tick scans
        self._rows = {u: [(g, (u, g), self.windows[(u, g)]) for g in self.gs_ids] for u in self.uav_ids} if not self.cellular else {}
        for t in self.train_ids:
            self.a2t[t] = LinkState((t, ""), None, LinkStatus.INTERRUPTED, window=RssiWindow(interval))
        if self.cellular:
            self._build_cells()

        self.a2a_beacon_bytes = 0
        self.beacon_every = max(1, int(round(pr.a2a_beacon_period_s / e.dt)))
        self.handover_counts: Dict[str, int] = {}
        self.events: List[HandoverEvent] = []
        self.records: List[tuple] = []
        self.path_budgets: List[Tuple[int, str, DelayBudget]] = []
        self._samples: Dict[Tuple[str, str], ChannelSample] = {}
        self._dropped_at_start = {f: 0 for f in self.flows}
        self._fresh: set = set()
        self._a2t_memo: Dict[str, tuple] = {}
        self._initial_attach()

    def _initial_attach(self):
        """Associate every airborne mobile with its strongest server at t=0."""
        ch = self.ch
        if self.cellular:
            c = self.scn.cellular
            for tid in self.train_ids:
                t = self.trains[tid]
                tpos = train_point(t, self.tracks[t.track])
                best = None
                for k in self._cell_candidates(tid):
                    bid, pos = self.cells[t.track][k]
                    rng, elev = slant_range_and_elevation(pos, tpos)
                    rssi = c.tx_power_dbm + c.gain_dbi + c.train_gain_dbi - fspl_db(rng, ch.cellular_carrier_hz) - multipath_penalty(abs(elev), ch)
                    if rssi >= ch.sensitivity_dbm and (best is None or rssi > best[1]):
                        best = (bid, rssi)
                if best is not None:
                    self.assoc.uplink[tid] = best[0]
                    ls = self.a2t[tid]
                    ls.serving = best[0]
                    ls.window = self.cell_windows[(tid, best[0])] = RssiWindow(self.clock.update_interval)
                    ls.set_status(LinkStatus.CONNECTED, 0.0)
            return
        for uid in self.uav_ids:
            if self.uavs[uid].airborne:
                self._attach_now(uid, 0.0)

    def _attach_now(self, uid: str, now: float, out_gs=frozenset()) -> Optional[str]:
        """Strongest GS by instantaneous RSSI, for a UAV that just took off."""
        best = None
        u = self.uavs[uid]
        for gid in self.gs_ids:
            if gid in out_gs:
                continue
            rssi = self._a2g_rssi(self.gss[gid], u.position)
            if rssi >= self.ch.sensitivity_dbm and (best is None or rssi > best[1]):
                best = (gid, rssi)
        if best is None:
            return None
        a = self.assoc.copy()
        a.uplink[uid] = best[0]
        self.assoc = a
        ls = self.a2g[uid]
        ls.serving = best[0]
        ls.window = self.windows[(uid, best[0])]
        ls.avg_rssi_dbm = ls.window.mean
        ls.blocked = False
        ls.sinr_db = math.inf
        ls.set_status(LinkStatus.CONNECTED, now)
        self._fresh.add(uid)
        return best[0]

    # ----------------------------------------------------------- helpers

    def _check_plan(self):
        lo, hi = self.plan.sub_bands
        if bands_overlap(lo, hi):
            raise SimulationAbort("direction sub-bands overlap")
        for tid, t in self.trains.items():
            if self.plan.assignments[tid] != self.plan.sub_bands[t.direction]:
                raise SimulationAbort(f"train {tid} holds the wrong sub-band")

    def _emit(self, ev: HandoverEvent):
        self.events.append(ev)
        self.handover_counts[ev.kind] = self.handover_counts.get(ev.kind, 0) + 1
        if self.keep_records:
            self.records.append(event_record(self.clock.n, ev))
        log.debug("event %s", ev)

    def _active_faults(self, now: float):
        if not self.faults:
            return _NONE, _NONE
        out_gs, blocks = set(), set()
        for f in self.faults:
            if f.start - _EPS <= now < f.start + f.duration - _EPS:
                (out_gs if f.kind == "gs_outage" else blocks).add(f.target)
        return out_gs, blocks

    def _allocate(self, tick: int):
        """Slot ownership, capacity shares and the position prediction for ``tick``."""
        self.owners = {}
        self.share = {}
        sdma = self.access_mode == "sdma-tdma"
        for d in (0, 1):
            group = [t for t in self.train_ids if self.trains[t].direction == d and t in self.assoc.serving_uav]
            if not group:
                continue
            if self.access_mode == "cdma":
                for t in group:
                    self.share[t] = 1.0 / len(group)
            elif len(group) == 1 and not sdma:
                self.share[group[0]] = 1.0
            else:
                owners = slot_owners(group, self.n_slots, tick)
                self.owners[d] = owners
                for t in group:
                    self.share[t] = owners.count(t) / self.n_slots
        if sdma:
            dt = self.clock.dt
            for tid, t in self.trains.items():
                self.predicted[tid] = predict_position(t.position, t.speed, dt, t.direction, self.tracks[t.track].length)

    # -------------------------------------------------------- cellular

    def _build_cells(self):
        c = self.scn.cellular
        self.cells: Dict[str, List[Tuple[str, Tuple[float, float, float]]]] = {}
        self.bs_pos: Dict[str, Tuple[float, float, float]] = {}
        for tid, track in self.tracks.items():
            n = max(1, math.ceil(track.length / c.bs_spacing_m)) if track.length > 0 else 1
            width = len(str(n))
            cells = []
            for k in range(n):
                s = min((k + 0.5) * c.bs_spacing_m, track.length)
                x, y = track.point_at(s)
                tx, ty = track.tangent_at(s, 0)
                pos = (x - ty * c.bs_offset_m, y + tx * c.bs_offset_m, c.bs_height_m)
                bid = f"{tid}-bs{k:0{width}d}"
                cells.append((bid, pos))
                self.bs_pos[bid] = pos
            self.cells[tid] = cells
        if c.threshold_dbm is None:
            horiz = math.hypot(c.bs_spacing_m / 2.0, c.bs_offset_m)
            dz = c.bs_height_m - 4.0
            rng = math.hypot(horiz, dz)
            elev = math.degrees(math.atan2(abs(dz), horiz))
            thr = (
                c.tx_power_dbm + c.gain_dbi + c.train_gain_dbi
                - fspl_db(rng, self.ch.cellular_carrier_hz) - multipath_penalty(elev, self.ch)
            )
        else:
            thr = c.threshold_dbm
        self.cell_threshold = thr
        self.cell_rule = HandoverRule(thr, thr + self.scn.protocol.hysteresis_db, self.scn.protocol.dwell_guard_s)
        self.cell_windows: Dict[Tuple[str, str], RssiWindow] = {}

    def _bs_node(self, bid: str) -> RadioNode:
        c = self.scn.cellular
        return RadioNode(bid, NodeKind.BS, self.bs_pos[bid], (0.0, 0.0, 0.0), c.tx_power_dbm, c.gain_dbi)

    def _cell_candidates(self, tid: str) -> List[int]:
        t = self.trains[tid]
        cells = self.cells[t.track]
        k0 = int(t.position // self.scn.cellular.bs_spacing_m)
        return [k for k in range(k0 - 2, k0 + 3) if 0 <= k < len(cells)]

    # ------------------------------------------------------------- nodes

    def _uav_a2g_node(self, u: UavState, toward: Tuple[float, float, float]) -> RadioNode:
        ch = self.ch
        beam = Beam(unit_vector(u.position, toward), ch.uav_a2g_beamwidth_deg, ch.uav_a2g_gain_dbi)
        return RadioNode(u.id, NodeKind.UAV, u.position, u.velocity, ch.uav_tx_power_dbm, ch.uav_a2g_gain_dbi, (beam,))

    def _gs_node(self, g: GroundStation, targets) -> RadioNode:
        beams = tuple(Beam(unit_vector(g.point, p), g.beamwidth_deg, g.peak_gain_dbi) for p in targets)
        return RadioNode(g.id, NodeKind.GS, g.point, (0.0, 0.0, 0.0), g.tx_power_dbm, g.peak_gain_dbi, beams)

    def _a2g_rssi(self, g: GroundStation, upos) -> float:
        """Candidate RSSI with both beams on target; same arithmetic as ``sample_link``."""
        ch = self.ch
        rng, elev = slant_range_and_elevation(g.point, upos)
        pl = fspl_db(rng, ch.a2g_carrier_hz)
        mp = multipath_penalty(abs(elev), ch)
        return g.tx_power_dbm + g.peak_gain_dbi + ch.uav_a2g_gain_dbi - pl - mp

    def _a2g_direct(self, g: GroundStation, u: UavState, blocked: bool) -> ChannelSample:
        """``sample_link`` for a serving A2G pair with no co-channel interferers.

        Both beams point along the link, so both gains are the peaks and the
        arithmetic reduces to the candidate scan's; the test suite checks it
        against the general path bit for bit.
        """
        ch = self.ch
        f = ch.a2g_carrier_hz
        bw = ch.a2g_bandwidth_hz
        gx, gy, gz = g.point
        ux, uy, uz = u.position
        dx, dy, dz = ux - gx, uy - gy, uz - gz
        horiz = math.hypot(dx, dy)
        rng = math.hypot(horiz, dz)
        if rng == 0.0:
            slant_range_and_elevation(g.point, u.position)  # raises
        elev = abs(math.degrees(math.atan2(dz, horiz)))
        pl = 20.0 * math.log10(4.0 * math.pi * rng * f / SPEED_OF_LIGHT)
        mp = 0.0 if elev >= ch.multipath_threshold_deg else ch.multipath_penalty_db
        p, gg, ug = g.tx_power_dbm, g.peak_gain_dbi, ch.uav_a2g_gain_dbi
        rssi = p + gg + ug - pl - mp
        noise = self._a2g_noise
        sinr = rssi - noise
        nrm = math.sqrt(dx * dx + dy * dy + dz * dz)
        vx, vy, vz = u.velocity
        closing = (0.0 - vx) * (dx / nrm) + (0.0 - vy) * (dy / nrm) + (0.0 - vz) * (dz / nrm)
        dop = doppler_shift(closing, f)
        if blocked or rssi < ch.sensitivity_dbm or sinr <= ch.min_sinr_db:
            cap = 0.0
        else:
            cap = ch.spectral_efficiency * bw * math.log2(1.0 + 10.0 ** (sinr / 10.0))
        return ChannelSample(
            LinkKind.A2G, g.id, u.id, rng, elev, f, pl, p, gg, ug, mp, rssi,
            _NEG_INF, noise, sinr, dop, bw, cap, blocked,
        )

    def _a2g_rssi_all(self, upos) -> List[float]:
        """``_a2g_rssi`` for every GS at once, inlined for the per-tick candidate scan."""
        ch = self.ch
        f = ch.a2g_carrier_hz
        thr, pen, ug = ch.multipath_threshold_deg, ch.multipath_penalty_db, ch.uav_a2g_gain_dbi
        ux, uy, uz = upos
        out = []
        for (gx, gy, gz), p, gg in self._gs_const:
            dz = uz - gz
            horiz = math.hypot(ux - gx, uy - gy)
            rng = math.hypot(horiz, dz)
            if rng == 0.0:
                slant_range_and_elevation((gx, gy, gz), upos)  # raises
            pl = 20.0 * math.log10(4.0 * math.pi * rng * f / SPEED_OF_LIGHT)
            mp = pen if abs(math.degrees(math.atan2(dz, horiz))) < thr else 0.0
            out.append(p + gg + ug - pl - mp)
        return out

    # ------------------------------------------------------------- phases

    def step(self) -> None:
        clk = self.clock
        clk.n += 1
        n = clk.n
        now = n * clk.dt
        dt = clk.dt
        self._samples = {}
        self._fresh = set()

        # (0) offered load for this tick
        offered: Dict[str, int] = {}
        self._dropped_at_start = {fid: f.dropped for fid, f in self.flows.items()}
        for fid, f in self.flows.items():
            rate = f.rate_bps
            if f.jitter:
                rate *= 1.0 + self.rng.uniform(-f.jitter, f.jitter)
            f.carry += rate * dt / 8.0
            b = int(f.carry)
            f.carry -= b
            offered[fid] = b
            f.offered += b

        # (1) trains
        for tid in self.train_ids:
            t = self.trains[tid]
            self.trains[tid] = advance_train(t, self.tracks[t.track], dt, self.kin)

        # (2) UAVs
        for uid in self.uav_ids:
            u = self.uavs[uid]
            if not u.airborne:
                continue
            if u.train is not None and u.train in self.trains:
                tr = self.trains[u.train]
                self.uavs[uid] = uav_tracking_step(u, tr, self.tracks[tr.track], dt, self.ctl)
            else:
                self.uavs[uid] = hover_step(u, dt)

        out_gs, blocks = self._active_faults(now)

        # (3)+(4) channel sampling and window updates
        if self.cellular:
            self._sample_cellular(now, blocks)
        else:
            self._sample_a2g(now, out_gs, blocks)
        self._sample_a2t(n, now, blocks)
        if not self.cellular:
            self._sample_a2a(now, blocks)

        # (5) protocols
        consumed: Dict[str, bool] = {}
        if self.cellular:
            self._protocol_cellular(n, now, offered, consumed)
        else:
            self._protocol_flight_change(n, now, offered, consumed)
            self._protocol_a2g(n, now, out_gs, offered, consumed)
        self._protocol_vertical(now)
        self.assoc.check()

        # (6) resources for the next tick
        self._allocate(n + 1)
        self._check_plan()

        # (7) traffic
        self._move_traffic(n, now, offered, consumed)

        # A2A beacons between airborne UAVs in range
        if not self.cellular and n % self.beacon_every == 0:
            air = [self.uavs[u] for u in self.uav_ids if self.uavs[u].airborne]
            rng = self.scn.protocol.a2a_range_m
            for i, a in enumerate(air):
                for b in air[i + 1:]:
                    if math.dist(a.position, b.position) <= rng:
                        self.a2a_beacon_bytes += 2 * self.scn.protocol.a2a_beacon_bytes

    # --- sampling

    def _sample_a2g(self, now: float, out_gs: set, blocks: set):
        ch = self.ch
        interval = self.clock.update_interval
        assoc = self.assoc
        relayed = assoc.relayed
        served: Dict[str, List[str]] = {}
        for u, g in assoc.uplink.items():
            if u not in relayed and g in self.gss:
                served.setdefault(g, []).append(u)
        uavs = self.uavs
        noise = self._a2g_noise
        entry = self.rule.entry_threshold_dbm
        min_sinr = ch.min_sinr_db
        windows, qs = self.windows, self.qualified_since
        for uid in self.uav_ids:
            u = uavs[uid]
            if not u.airborne:
                continue
            serving = None if uid in relayed else assoc.uplink.get(uid)
            for (gid, key, win), rssi in zip(self._rows[uid], self._a2g_rssi_all(u.position)):
                if gid == serving:
                    continue
                if gid in out_gs or (blocks and _link_blocked(blocks, gid, uid)):
                    win.evict(now)
                    qs[key] = None
                    continue
                win.push(now, rssi)
                if rssi >= entry and rssi - noise >= min_sinr:
                    if qs[key] is None:
                        qs[key] = now
                else:
                    qs[key] = None
            if serving is None:
                continue
            ls = self.a2g[uid]
            g = self.gss[serving]
            blocked = serving in out_gs or (bool(blocks) and _link_blocked(blocks, serving, uid))
            interferers = [o for o in served if o != serving and o not in out_gs]
            if interferers:
                gnode = self._gs_node(g, [uavs[v].position for v in sorted(served[serving])])
                inodes = [self._gs_node(self.gss[o], [uavs[v].position for v in sorted(served[o])]) for o in sorted(interferers)]
                s = sample_link(gnode, self._uav_a2g_node(u, g.point), ch, inodes, bandwidth_hz=ch.a2g_bandwidth_hz, blocked=blocked)
            else:
                s = self._a2g_direct(g, u, blocked)
            self._samples[("a2g", uid)] = s
            key = (uid, serving)
            win = ls.window = windows[key]
            if blocked:
                win.evict(now)
                ls.avg_rssi_dbm = win.mean
                ls.sinr_db = s.sinr_db
                ls.blocked = True
                qs[key] = None
            else:
                win.interval = interval
                win.push(now, s.rssi_dbm)
                ls.avg_rssi_dbm = win.mean
                ls.sinr_db = s.sinr_db
                ls.blocked = False
                if s.rssi_dbm >= entry and s.rssi_dbm - noise >= min_sinr:
                    if qs[key] is None:
                        qs[key] = now
                else:
                    qs[key] = None

    def _sample_a2t(self, n: int, now: float, blocks: set):
        ch = self.ch
        interval = self.clock.update_interval
        if self.cellular:
            return
        sched = BeamSchedule() if self.access_mode == "sdma-tdma" else None
        res = self.scn.resource
        for tid in self.train_ids:
            ls = self.a2t[tid]
            t = self.trains[tid]
            track = self.tracks[t.track]
            tpos = train_point(t, track)
            uid = self.assoc.serving_uav.get(tid)
            if uid is None:
                ls.serving = None
                ls.blocked = True
                ls.window.clear()
                ls.avg_rssi_dbm = _NEG_INF
                ls.set_status(LinkStatus.INTERRUPTED, now)
                continue
            u = self.uavs[uid]
            if ls.serving != uid:
                ls.serving = uid
                ls.window.clear()
            bw = self.plan.bandwidth_of(tid)
            blocked = bool(blocks) and _link_blocked(blocks, uid, tid)
            if sched is not None:
                pred = self.predicted.get(tid, t.position)
                px, py = track.point_at(pred)
                target = (px, py, tpos[2])
                entry = None
                for slot, owner in enumerate(self.owners.get(t.direction, [])):
                    if owner == tid:
                        entry = sdma_beam_step(u, target, slot, tid)
                        sched.add(entry)
                bore = entry.boresight if entry else unit_vector(u.position, tpos)
                beam = Beam(bore, res.sdma_beamwidth_deg, res.sdma_gain_dbi)
                s = key = None
            else:
                # fixed beams: the memo key needs only the relative geometry
                up = u.position
                tvel = train_velocity(t, track)
                key = (uid, (tpos[0] - up[0], tpos[1] - up[1], tpos[2] - up[2]), u.velocity, tvel, bw, blocked)
                hit = self._a2t_memo.get(tid)
                s = hit[1] if hit is not None and hit[0] == key else None
                beam = None
            if s is None:
                if beam is None:
                    beam = Beam(unit_vector(u.position, tpos), ch.uav_a2t_beamwidth_deg, ch.uav_a2t_gain_dbi)
                unode = RadioNode(uid, NodeKind.UAV, u.position, u.velocity, ch.uav_tx_power_dbm, beam.peak_gain_dbi, (beam,))
                tnode = RadioNode(tid, NodeKind.TRAIN, tpos, key[3] if key else train_velocity(t, track), 0.0, ch.train_gain_dbi, (self._train_beam,))
                # slot-exclusive (TDMA) or code-orthogonal (CDMA): no co-channel A2T interferers
                s = sample_link(unode, tnode, ch, (), bandwidth_hz=bw, blocked=blocked)
                if key is not None:
                    self._a2t_memo[tid] = (key, s)
            self._samples[("a2t", tid)] = s
            if s.blocked:
                ls.blocked = True
                ls.window.evict(now)
                ls.avg_rssi_dbm = ls.window.mean
                ls.sinr_db = s.sinr_db
            else:
                update_rssi_window(ls, s, now, interval)
            ls.set_status(LinkStatus.INTERRUPTED if is_interrupted(ls, ch) else LinkStatus.CONNECTED, now)

    def _sample_a2a(self, now: float, blocks: set):
        ch = self.ch
        for uid in sorted(self.assoc.relayed):
            rid = self.assoc.uplink[uid]
            u, r = self.uavs[uid], self.uavs[rid]
            rn = RadioNode(rid, NodeKind.UAV, r.position, r.velocity, ch.uav_tx_power_dbm, ch.uav_a2a_gain_dbi)
            un = RadioNode(uid, NodeKind.UAV, u.position, u.velocity, ch.uav_tx_power_dbm, ch.uav_a2a_gain_dbi)
            self._samples[("a2a", uid)] = sample_link(rn, un, ch, blocked=_link_blocked(blocks, rid, uid))

    def _sample_cellular(self, now: float, blocks: set):
        ch = self.ch
        c = self.scn.cellular
        interval = self.clock.update_interval
        for tid in self.train_ids:
            t = self.trains[tid]
            track = self.tracks[t.track]
            tpos = train_point(t, track)
            cells = self.cells[t.track]
            ks = self._cell_candidates(tid)
            live = set()
            serving = self.assoc.uplink.get(tid)
            for k in ks:
                bid, pos = cells[k]
                live.add(bid)
                key = (tid, bid)
                win = self.cell_windows.get(key)
                if win is None:
                    win = self.cell_windows[key] = RssiWindow(interval)
                if bid == serving:
                    continue
                if _link_blocked(blocks, bid, tid):
                    win.evict(now)
                    continue
                rng, elev = slant_range_and_elevation(pos, tpos)
                rssi = c.tx_power_dbm + c.gain_dbi + c.train_gain_dbi - fspl_db(rng, ch.cellular_carrier_hz) - multipath_penalty(abs(elev), ch)
                win.push(now, rssi)
            if serving is not None:
                live.add(serving)
            for key in [k for k in self.cell_windows if k[0] == tid and k[1] not in live]:
                del self.cell_windows[key]
            if serving is None:
                continue
            ls = self.a2t[tid]
            k_serv = next(i for i, (b, _) in enumerate(cells) if b == serving)
            bnode = self._bs_node(serving)
            tnode = RadioNode(tid, NodeKind.TRAIN, tpos, train_velocity(t, track), 0.0, c.train_gain_dbi)
            span = 3 * c.reuse
            interferers = [
                self._bs_node(cells[k][0])
                for k in range(max(0, k_serv - span), min(len(cells), k_serv + span + 1))
                if k != k_serv and (k - k_serv) % c.reuse == 0
            ]
            s = sample_link(bnode, tnode, ch, interferers, blocked=_link_blocked(blocks, serving, tid))
            self._samples[("cell", tid)] = s
            ls.window = self.cell_windows[(tid, serving)]
            if s.blocked:
                ls.window.evict(now)
                ls.avg_rssi_dbm = ls.window.mean
                ls.sinr_db = s.sinr_db
                ls.blocked = True
            else:
                update_rssi_window(ls, s, now, interval)

    # --- protocols

    def _in_flight(self, tid: str, offered: Dict[str, int], consumed: Dict[str, bool]) -> Dict[str, int]:
        out = {}
        net = self.offload.get(tid)
        for f in self.flows_of[tid]:
            if net is not None and f.cls == "user":
                continue
            if not consumed.get(f.id):
                out[f.id] = offered[f.id]
        return out

    def _switch_in_flight(self, tid: str, mode: str, now: float, offered, consumed):
        """Buffer (soft) or drop (hard) one tick of ``tid``'s in-flight bytes."""
        dropped = buffered = 0
        buf = self.buffers[tid]
        for fid, b in sorted(self._in_flight(tid, offered, consumed).items()):
            f = self.flows[fid]
            if mode == "soft":
                over = buffer_enqueue(buf, b, now, fid)
                f.buffered += b - over
                f.dropped += over
                buffered += b - over
                dropped += over
            else:
                f.dropped += b
                dropped += b
            consumed[fid] = True
        return dropped, buffered

    def _handover(self, mobile: str, tid_list: List[str], target: str, kind: str, n: int, now: float, offered, consumed):
        mode = self.scn.protocol.handover_mode
        # bytes are accounted per train buffer below; the event carries the totals
        assoc, ev = execute_handover(
            self.assoc, HandoverDecision(HandoverAction.HANDOVER, target), mode, mobile=mobile, now=now, kind=kind,
            in_flight={}, buffer=None,
        )
        if ev is None:
            return False
        dropped = buffered = 0
        for tid in tid_list:
            d, b = self._switch_in_flight(tid, mode, now, offered, consumed)
            dropped += d
            buffered += b
            if mode == "hard":
                self.gap_until[tid] = n + self.scn.protocol.hard_gap_ticks - 1
        self.assoc = assoc
        self._emit(replace(ev, dropped_bytes=dropped, buffered_bytes=buffered))
        return True

    def _protocol_flight_change(self, n: int, now: float, offered, consumed):
        pr = self.scn.protocol
        for tid in self.train_ids:
            t = self.trains[tid]
            track = self.tracks[t.track]
            pend = [(o, nw) for o, nw in sorted(self.assoc.pending.items()) if self.uavs[nw].train == tid]
            uid = self.assoc.serving_uav.get(tid)
            if pend:
                old, new = pend[0]
            elif uid is not None and needs_flight_change(self.uavs[uid], self.policies[uid]):
                old, new = uid, self._pick_replacement(tid)
                if new is not None:
                    nu = self.uavs[new]
                    alt = nu.altitude
                    self.uavs[new] = replace(
                        nu, airborne=True, train=tid, replacement_inbound=True,
                        position=(nu.position[0], nu.position[1], alt),
                    )
                    self._emit(HandoverEvent(now, "dispatch", new, None, tid, "soft"))
                    gid = self._attach_now(new, now, self._active_faults(now)[0])
                    if gid is not None:
                        self._emit(HandoverEvent(now, "attach", new, None, gid, "soft"))
            else:
                continue
            old_u = self.uavs[old]
            new_u = self.uavs[new] if new is not None else None
            at_station = near_station(t, track, pr.station_zone_m, pr.vertical_speed_ceiling)
            before = self.assoc
            after = flight_change(before, old_u, new_u, t, track, self.policies[old], at_station=at_station)
            if after is before:
                continue
            was = before.serving_uav.get(tid)
            now_serving = after.serving_uav.get(tid)
            self.assoc = after
            if was == old and now_serving == new and new is not None:
                mode = pr.handover_mode
                d, b = self._switch_in_flight(tid, mode, now, offered, consumed)
                if mode == "hard":
                    self.gap_until[tid] = n + pr.hard_gap_ticks - 1
                self.buffers[tid].owner = new
                self.uavs[new] = replace(self.uavs[new], replacement_inbound=False)
                self._land(old)
                self._emit(HandoverEvent(now, "flight_change", tid, old, new, mode, d, b))
            elif was == old and now_serving is None:
                self._emit(HandoverEvent(now, "forced_release", tid, old, None, "hard"))
                inbound = after.pending.get(old)
                self._land(old)
                if inbound is not None:
                    # the replacement is still on its way; keep the pairing
                    a = self.assoc.copy()
                    a.pending[old] = inbound
                    self.assoc = a
            elif was is None and now_serving == new and new is not None:
                self.buffers[tid].owner = new
                self.uavs[new] = replace(self.uavs[new], replacement_inbound=False)
                self._emit(HandoverEvent(now, "attach", tid, None, new, "soft"))

    def _pick_replacement(self, tid: str) -> Optional[str]:
        t = self.trains[tid]
        x, y = self.tracks[t.track].point_at(t.position)
        busy = set(self.assoc.serving_uav.values()) | set(self.assoc.pending.values())
        best = None
        for uid in self.uav_ids:
            u = self.uavs[uid]
            if uid in busy or u.train is not None or needs_flight_change(u, self.policies[uid]):
                continue
            d = math.hypot(u.position[0] - x, u.position[1] - y)
            if best is None or (d, uid) < best:
                best = (d, uid)
        return best[1] if best else None

    def _land(self, uid: str):
        u = self.uavs[uid]
        self.uavs[uid] = replace(u, airborne=False, train=None, velocity=(0.0, 0.0, 0.0), replacement_inbound=False)
        for key in self.windows:
            if key[0] == uid:
                self.windows[key].clear()
                self.qualified_since[key] = None
        ls = self.a2g[uid]
        ls.serving = None
        ls.avg_rssi_dbm = _NEG_INF
        ls.set_status(LinkStatus.INTERRUPTED, self.clock.time)
        a = self.assoc.copy()
        a.uplink.pop(uid, None)
        a.relayed.discard(uid)
        a.pending.pop(uid, None)
        self.assoc = a

    def _gs_candidates(self, uid: str):
        return [(g, w.mean) for g, _, w in self._rows[uid]]

    def _protocol_a2g(self, n: int, now: float, out_gs: set, offered, consumed):
        ch = self.ch
        interval = self.clock.update_interval
        pr = self.scn.protocol
        healthy = set()
        for uid in self.uav_ids:
            if not self.uavs[uid].airborne or uid in self.assoc.relayed or uid not in self.assoc.uplink:
                continue
            if not is_interrupted(self.a2g[uid], ch):
                healthy.add(uid)

        for uid in self.uav_ids:
            u = self.uavs[uid]
            if not u.airborne or uid in self._fresh:
                continue  # a link attached this tick is judged from its first sample on
            ls = self.a2g[uid]
            trains = sorted(t for t, v in self.assoc.serving_uav.items() if v == uid)
            gs = self.assoc.uplink.get(uid)
            cands = self._gs_candidates(uid)

            if gs is None:
                best = None
                for g, avg in cands:
                    if avg >= ch.sensitivity_dbm and (best is None or avg > best[1]):
                        best = (g, avg)
                if best is not None:
                    a = self.assoc.copy()
                    a.uplink[uid] = best[0]
                    self.assoc = a
                    ls.serving = best[0]
                    ls.window = self.windows[(uid, best[0])]
                    ls.avg_rssi_dbm = ls.window.mean
                    ls.sinr_db = math.inf
                    ls.blocked = False
                    ls.set_status(LinkStatus.CONNECTED, now)
                    self._emit(HandoverEvent(now, "attach", uid, None, best[0], "soft"))
                    continue
                if self._try_relay(uid, healthy, now):
                    continue
                ls.set_status(LinkStatus.INTERRUPTED, now)
                continue

            if uid in self.assoc.relayed:
                ready = [
                    (g, avg)
                    for g, avg in cands
                    if self.qualified_since[(uid, g)] is not None
                    and now - self.qualified_since[(uid, g)] >= interval - _EPS
                ]
                if ready:
                    g = min(ready, key=lambda c: (-c[1], c[0]))[0]
                    self.assoc = restore_direct(self.assoc, uid, g)
                    ls.serving = g
                    ls.window = self.windows[(uid, g)]
                    ls.avg_rssi_dbm = ls.window.mean
                    ls.blocked = False
                    ls.sinr_db = math.inf
                    ls.last_handover_at = now
                    ls.set_status(LinkStatus.CONNECTED, now)
                    self._emit(HandoverEvent(now, "restore", uid, gs, g, "soft"))
                    continue
                relay = self.uavs.get(gs)
                if relay is None or gs not in healthy or math.dist(u.position, relay.position) > pr.a2a_range_m:
                    a = self.assoc.copy()
                    a.uplink.pop(uid, None)
                    a.relayed.discard(uid)
                    self.assoc = a
                    if not self._try_relay(uid, healthy, now):
                        ls.set_status(LinkStatus.INTERRUPTED, now)
                    continue
                ls.set_status(LinkStatus.RELAYED, now)
                continue

            if not is_interrupted(ls, ch):
                d = evaluate_handover(ls, cands, self.rule, now)
                if d.action is HandoverAction.STAY:
                    ls.set_status(LinkStatus.CONNECTED, now)
                elif d.action is HandoverAction.INTERRUPT:
                    ls.set_status(LinkStatus.DEGRADED, now)
                else:
                    self._a2g_handover(uid, trains, d.target, n, now, offered, consumed)
                continue

            ls.set_status(LinkStatus.INTERRUPTED, now)
            best = best_candidate(cands, self.rule, exclude=gs)
            if best is not None:
                self._a2g_handover(uid, trains, best[0], n, now, offered, consumed)
                continue
            self._try_relay(uid, healthy, now)

    def _a2g_handover(self, uid, trains, target, n, now, offered, consumed):
        ls = self.a2g[uid]
        if self._handover(uid, trains, target, "a2g", n, now, offered, consumed):
            ls.serving = target
            ls.window = self.windows[(uid, target)]
            ls.avg_rssi_dbm = ls.window.mean
            ls.blocked = False
            ls.sinr_db = math.inf
            ls.last_handover_at = now
            hard = self.scn.protocol.handover_mode == "hard"
            ls.set_status(LinkStatus.HANDOVER_IN_PROGRESS if hard else LinkStatus.CONNECTED, now)

    def _try_relay(self, uid: str, healthy: set, now: float) -> bool:
        neighbors = [self.uavs[h] for h in sorted(healthy) if h != uid]
        a = a2a_failover(self.assoc, self.uavs[uid], neighbors, self.scn.protocol.a2a_range_m)
        if a is self.assoc:
            return False
        old = self.assoc.uplink.get(uid)
        self.assoc = a
        self.a2g[uid].set_status(LinkStatus.RELAYED, now)
        self._emit(HandoverEvent(now, "relay", uid, old, a.uplink[uid], "soft"))
        return True

    def _protocol_cellular(self, n: int, now: float, offered, consumed):
        ch = self.ch
        for tid in self.train_ids:
            ls = self.a2t[tid]
            t = self.trains[tid]
            cells = self.cells[t.track]
            cands = [(cells[k][0], self.cell_windows[(tid, cells[k][0])].mean) for k in self._cell_candidates(tid)]
            serving = self.assoc.uplink.get(tid)
            if serving is None:
                best = None
                for b, avg in cands:
                    if avg >= ch.sensitivity_dbm and (best is None or avg > best[1]):
                        best = (b, avg)
                if best is not None:
                    a = self.assoc.copy()
                    a.uplink[tid] = best[0]
                    self.assoc = a
                    ls.serving = best[0]
                    ls.window = self.cell_windows[(tid, best[0])]
                    ls.avg_rssi_dbm = ls.window.mean
                    ls.sinr_db = math.inf
                    ls.blocked = False
                    ls.set_status(LinkStatus.CONNECTED, now)
                    self._emit(HandoverEvent(now, "attach", tid, None, best[0], "soft"))
                else:
                    ls.set_status(LinkStatus.INTERRUPTED, now)
                continue
            interrupted = is_interrupted(ls, ch)
            if interrupted:
                ls.set_status(LinkStatus.INTERRUPTED, now)
                best = best_candidate(cands, self.cell_rule, exclude=serving)
                d = HandoverDecision(HandoverAction.HANDOVER, best[0]) if best else None
            else:
                d = evaluate_handover(ls, cands, self.cell_rule, now)
                if d.action is HandoverAction.STAY:
                    ls.set_status(LinkStatus.CONNECTED, now)
                    d = None
                elif d.action is HandoverAction.INTERRUPT:
                    ls.set_status(LinkStatus.DEGRADED, now)
                    d = None
            if d is None:
                continue
            if self._handover(tid, [tid], d.target, "cellular", n, now, offered, consumed):
                ls.serving = d.target
                ls.window = self.cell_windows[(tid, d.target)]
                ls.avg_rssi_dbm = ls.window.mean
                ls.blocked = False
                ls.sinr_db = math.inf
                ls.last_handover_at = now
                hard = self.scn.protocol.handover_mode == "hard"
                ls.set_status(LinkStatus.HANDOVER_IN_PROGRESS if hard else LinkStatus.CONNECTED, now)

    def _protocol_vertical(self, now: float):
        pr = self.scn.protocol
        for tid in self.train_ids:
            net = vertical_handover(self.trains[tid], self.nets, pr.vertical_speed_ceiling)
            cur = self.offload[tid]
            if net != cur:
                self.offload[tid] = net
                self._emit(HandoverEvent(now, "vertical", tid, cur, net, "soft"))

    # --- traffic

    def _main_path(self, tid: str, n: int) -> _Path:
        e = self.scn.engine
        if n <= self.gap_until[tid]:
            return _Path("handover", 0.0, (), False, 0.0, "")
        ch = self.ch
        if self.cellular:
            bid = self.assoc.uplink.get(tid)
            s = self._samples.get(("cell", tid))
            ls = self.a2t[tid]
            if bid is None or s is None or is_interrupted(ls, ch) or s.capacity_bps <= 0.0:
                return _NO_PATH
            return _Path("cellular", s.capacity_bps, (s.range_m,), False, self.scn.cellular.processing_s, f"{bid}>{tid}")
        uid = self.assoc.serving_uav.get(tid)
        if uid is None:
            return _NO_PATH
        a2t = self._samples.get(("a2t", tid))
        if a2t is None or self.a2t[tid].status is LinkStatus.INTERRUPTED:
            return _NO_PATH
        cap_t = a2t.capacity_bps * self.share.get(tid, 0.0)
        up = self.assoc.uplink.get(uid)
        if up is None:
            return _NO_PATH
        if uid in self.assoc.relayed:
            hop = self._samples.get(("a2a", uid))
            rel = self._samples.get(("a2g", up))
            if hop is None or rel is None or self.a2g[up].status in (LinkStatus.INTERRUPTED,):
                return _NO_PATH
            cap = min(rel.capacity_bps, hop.capacity_bps, cap_t)
            if cap <= 0.0:
                return _NO_PATH
            chain = f"{rel.tx}>{up}>{uid}>{tid}"
            return _Path("relayed", cap, (rel.range_m, hop.range_m, a2t.range_m), True, e.uav_processing_s, chain)
        a2g = self._samples.get(("a2g", uid))
        if a2g is None or is_interrupted(self.a2g[uid], ch):
            return _NO_PATH
        cap = min(a2g.capacity_bps, cap_t)
        if cap <= 0.0:
            return _NO_PATH
        return _Path("direct", cap, (a2g.range_m, a2t.range_m), False, e.uav_processing_s, f"{up}>{uid}>{tid}")

    def _vertical_path(self, tid: str) -> Optional[_Path]:
        net_id = self.offload[tid]
        if net_id is None:
            return None
        net = self.net_by_id[net_id]
        dist = abs(self.trains[tid].position - net.position)
        return _Path("vertical", net.capacity_bps, (dist,), False, net.latency_s, f"{net_id}>{tid}")

    def _move_traffic(self, n: int, now: float, offered, consumed):
        dt = self.clock.dt
        hst = self.scn.engine.hst_processing_s
        keep = self.keep_records
        records = self.records
        start = self._dropped_at_start
        for tid in self.train_ids:
            main = self._main_path(tid, n)
            vert = self._vertical_path(tid) if self.offload[tid] is not None else None
            paths = (main,) if vert is None else (vert, main)
            budgets = {}
            bases = {}
            for p in paths:
                if p.hops:
                    budgets[p.state] = int(p.capacity * dt / 8.0)
                    bases[p.state] = compute_delay(p.hops, relayed=p.relayed, uav_processing=p.uav_processing, hst_processing=hst)
            flows = self.flows_of[tid]
            routes = [vert if vert is not None and f.cls == "user" else main for f in flows]
            k = len(flows)
            delivered = [0] * k
            dmax = [0.0] * k
            buf = self.buffers[tid]

            # queued bytes leave first, FIFO per path, vertical first
            if buf.items:
                index = {f.id: i for i, f in enumerate(flows)}
                for p in paths:
                    if p.state not in budgets:
                        continue
                    elig = {f.id for f, r in zip(flows, routes) if r is p}
                    if not elig:
                        continue
                    base = bases[p.state].total
                    for fid, nb, q in buffer_drain(buf, budgets[p.state], now, elig):
                        budgets[p.state] -= nb
                        i = index[fid]
                        fl = flows[i]
                        fl.buffered -= nb
                        fl.delivered += nb
                        delivered[i] += nb
                        d = base + q
                        fl.delays.append(d)
                        if d > dmax[i]:
                            dmax[i] = d

            for i, f in enumerate(flows):
                fid = f.id
                b = offered[fid]
                st = routes[i].state
                if consumed and consumed.get(fid):
                    pass
                elif st == "handover":
                    f.dropped += b
                else:
                    room = budgets.get(st)
                    if room:
                        d = b if b < room else room
                        if d > 0:
                            budgets[st] = room - d
                            f.delivered += d
                            delivered[i] += d
                            delay = bases[st].total
                            f.delays.append(delay)
                            if delay > dmax[i]:
                                dmax[i] = delay
                        b -= d
                    if b > 0:
                        over = buffer_enqueue(buf, b, now, fid)
                        f.buffered += b - over
                        f.dropped += over

                if dmax[i] > f.delay_max:
                    f.delay_max = dmax[i]
                if st in OUTAGE_STATES:
                    f.outage_ticks += 1
                elif consumed and consumed.get(fid):
                    st = "switching"
                if f.offered != f.delivered + f.dropped + f.buffered:
                    raise SimulationAbort(
                        f"byte conservation broken for flow {fid} at tick {n}: "
                        f"{f.offered} != {f.delivered} + {f.dropped} + {f.buffered}"
                    )
                if keep:
                    # flow_record, inlined: three per train per tick
                    records.append((
                        n, now, "flow", fid, f.cls, st, None, None, None, None, None, None, None, None,
                        offered[fid], delivered[i], f.dropped - start[fid], f.buffered,
                        dmax[i] if delivered[i] else None, None, None, None,
                    ))
            if keep:
                self._emit_link_records(tid, n, now)
                for p in (main, vert):
                    if p is None:
                        continue
                    base = bases.get(p.state)
                    records.append(path_record(n, now, tid, p.state, p.chain, math.fsum(p.hops) if p.hops else None,
                                               p.capacity if base else None, base))
                    if base is not None:
                        self.path_budgets.append((n, tid, base))

    def _emit_link_records(self, tid: str, n: int, now: float):
        if self.cellular:
            s = self._samples.get(("cell", tid))
            if s is not None:
                ls = self.a2t[tid]
                self.records.append(link_record(n, now, s, ls.status, ls.avg_rssi_dbm))
            return
        uid = self.assoc.serving_uav.get(tid)
        s = self._samples.get(("a2t", tid))
        if s is not None:
            ls = self.a2t[tid]
            self.records.append(link_record(n, now, s, ls.status, ls.avg_rssi_dbm))
        if uid is None:
            return
        for key in (("a2g", uid), ("a2a", uid)):
            s = self._samples.get(key)
            if s is not None:
                ls = self.a2g[uid]
                self.records.append(link_record(n, now, s, ls.status, ls.avg_rssi_dbm))

    # ------------------------------------------------------------- run

    def run(self) -> MetricsReport:
        total = self.clock.n_ticks
        # the tick loop makes no reference cycles; collector passes over the growing
        # record list would only cost time
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            while self.clock.n < total:
                self.step()
        finally:
            if was_enabled:
                gc.enable()
        if self.clock.n != total:
            raise SimulationAbort(f"tick count {self.clock.n} != {total}")
        return self.report()

    def summary(self) -> dict:
        dur = self.clock.n * self.clock.dt
        flows = {}
        tot = dict(offered_bytes=0, delivered_bytes=0, dropped_bytes=0, buffered_bytes=0)
        all_delays: List[float] = []
        n = self.clock.n
        for fid, f in self.flows.items():
            flows[fid] = {
                "class": f.cls,
                "train": f.train,
                "offered_bytes": f.offered,
                "delivered_bytes": f.delivered,
                "dropped_bytes": f.dropped,
                "buffered_bytes": f.buffered,
                "ticks": n,
                "outage_ticks": f.outage_ticks,
                "outage_probability": f.outage_ticks / n if n else 0.0,
                "throughput_bps": f.delivered * 8.0 / dur if dur > 0 else 0.0,
                "per_proxy": f.dropped / f.offered if f.offered else 0.0,
                "delay_max_s": f.delay_max,
                "delay": delay_stats(f.delays),
            }
            tot["offered_bytes"] += f.offered
            tot["delivered_bytes"] += f.delivered
            tot["dropped_bytes"] += f.dropped
            tot["buffered_bytes"] += f.buffered
            all_delays.extend(f.delays)
        out_ticks = sum(f.outage_ticks for f in self.flows.values())
        tot["outage_probability"] = out_ticks / (n * len(self.flows)) if n and self.flows else 0.0
        tot["throughput_bps"] = tot["delivered_bytes"] * 8.0 / dur if dur > 0 else 0.0
        tot["per_proxy"] = tot["dropped_bytes"] / tot["offered_bytes"] if tot["offered_bytes"] else 0.0
        tot["delay"] = delay_stats(all_delays)
        counts = dict(sorted(self.handover_counts.items()))
        return {
            "schema": RECORD_SCHEMA_VERSION,
            "scenario": self.scn.name,
            "mode": self.scn.mode,
            "seed": self.seed,
            "ticks": n,
            "dt": self.clock.dt,
            "duration_s": dur,
            "events": counts,
            "handovers": {k: counts.get(k, 0) for k in HANDOVER_KINDS},
            "handovers_total": sum(counts.get(k, 0) for k in HANDOVER_KINDS),
            "flows": flows,
            "totals": tot,
            "a2a_control_bytes": self.a2a_beacon_bytes,
            "preset": {"payload_kg": PRESET_PAYLOAD_KG, "data_rate_target_bps": PRESET_DATA_RATE_TARGET_BPS},
        }

    def report(self) -> MetricsReport:
        return MetricsReport(
            records=self.records,
            events=list(self.events),
            summary=self.summary(),
            delay_samples={fid: list(f.delays) for fid, f in self.flows.items()},
            path_budgets=list(self.path_budgets),
        )


def step(sim: Simulation) -> Simulation:
    sim.step()
    return sim


def run(scenario: Scenario, seed: int = 0, *, keep_records: bool = True) -> MetricsReport:
    return Simulation(scenario, seed, keep_records=keep_records).run()


def run_cellular_baseline(scenario: Scenario, seed: int = 0, *, keep_records: bool = True) -> MetricsReport:
    return run(replace(scenario, mode="cellular-baseline"), seed, keep_records=keep_records)
