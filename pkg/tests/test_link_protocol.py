import pytest
from hypothesis import given
from hypothesis import strategies as st

from uasr.errors import ProtocolError, SimulationAbort
from uasr.link_protocol import (
    INTERRUPT,
    STAY,
    AssociationTable,
    FlightPolicy,
    HandoverAction,
    HandoverDecision,
    HandoverRule,
    LinkState,
    LinkStatus,
    RelayBuffer,
    RssiWindow,
    StationNetwork,
    a2a_failover,
    buffer_drain,
    buffer_enqueue,
    evaluate_handover,
    execute_handover,
    flight_change,
    needs_flight_change,
    vertical_handover,
)
from uasr.world import TrackPath, TrainState, UavState

# ---- RSSI window


def _window(samples, interval=0.25):
    w = RssiWindow(interval)
    for t, v in samples:
        w.push(t, v)
    return w


def test_constant_samples_average():
    assert _window([(0.1 * k, -70.0) for k in range(1, 6)]).mean == -70.0


def test_two_point_mean():
    assert _window([(0.1, -60.0), (0.2, -80.0)]).mean == -70.0


def test_five_samples_at_50ms():
    w = _window(zip([0.05, 0.10, 0.15, 0.20, 0.25], [-60.0, -60.0, -60.0, -90.0, -90.0]))
    assert len(w) == 5
    assert w.mean == pytest.approx(-72.0)


def test_sliding_eviction():
    w = _window([(0.1, -50.0), (0.2, -60.0), (0.3, -70.0), (0.4, -80.0)])
    # (0.15, 0.4] keeps three samples at a 100 ms tick
    assert [t for t, _ in w.samples] == [0.2, 0.3, 0.4]
    assert w.mean == pytest.approx(-70.0)


def test_out_of_order_sample_rejected():
    w = _window([(1.0, -70.0)])
    with pytest.raises(ProtocolError):
        w.push(0.9, -70.0)


@given(st.lists(st.floats(-120.0, -20.0), min_size=1, max_size=60))
def test_window_mean_is_arithmetic_mean_of_recent(vals):
    dt = 0.1
    w = RssiWindow(0.25)
    for k, v in enumerate(vals, 1):
        w.push(k * dt, v)
    recent = vals[-3:]
    assert w.mean == pytest.approx(sum(recent) / len(recent))


# ---- handover decision

RULE = HandoverRule(threshold_dbm=-80.0, entry_threshold_dbm=-75.0, guard_s=1.0)


def _ls(avg, serving="G1", status=LinkStatus.CONNECTED, last=-1e9):
    return LinkState(("U", serving), serving, status, avg, last_handover_at=last)


def test_stay_above_threshold():
    assert evaluate_handover(_ls(-65.0), [("G2", -50.0)], RULE) == STAY


def test_handover_to_strong_candidate():
    d = evaluate_handover(_ls(-85.0), [("G2", -70.0)], RULE)
    assert d == HandoverDecision(HandoverAction.HANDOVER, "G2")


def test_interrupt_when_candidate_too_weak():
    assert evaluate_handover(_ls(-85.0), [("G2", -78.0)], RULE) == INTERRUPT


def test_tie_goes_to_lowest_id():
    d = evaluate_handover(_ls(-85.0), [("G9", -70.0), ("G3", -70.0), ("G5", -71.0)], RULE)
    assert d.target == "G3"


def test_serving_station_is_not_a_candidate():
    assert evaluate_handover(_ls(-85.0), [("G1", -60.0)], RULE) == INTERRUPT


def test_dwell_guard_blocks_flapping():
    assert evaluate_handover(_ls(-85.0, last=10.0), [("G2", -60.0)], RULE, now=10.5) == STAY
    assert evaluate_handover(_ls(-85.0, last=10.0), [("G2", -60.0)], RULE, now=11.0).target == "G2"
    # an interrupted link may leave at once
    ls = _ls(-85.0, status=LinkStatus.INTERRUPTED, last=10.0)
    assert evaluate_handover(ls, [("G2", -60.0)], RULE, now=10.5).target == "G2"


def test_entry_threshold_default_hysteresis():
    from uasr.channel import ChannelParams

    r = HandoverRule.from_params(ChannelParams())
    assert r.entry_threshold_dbm == r.threshold_dbm + 5.0
    assert r.guard_s == 1.0


def _brute_force(avg, cands, rule):
    """Three-way rule written out as an enumeration."""
    if avg >= rule.threshold_dbm:
        return ("stay", None)
    ok = [(-v, s) for s, v in cands if s != "G1" and v >= rule.entry_threshold_dbm]
    if not ok:
        return ("interrupt", None)
    return ("handover", min(ok)[1])


rssi = st.floats(-110.0, -40.0)


@given(avg=rssi, cands=st.lists(st.tuples(st.sampled_from(["G1", "G2", "G3", "G4"]), rssi), max_size=6))
def test_decision_matches_enumeration_and_is_repeatable(avg, cands):
    d1 = evaluate_handover(_ls(avg), cands, RULE)
    d2 = evaluate_handover(_ls(avg), list(cands), RULE)
    assert d1 == d2
    assert (d1.action.value, d1.target) == _brute_force(avg, cands, RULE)


# ---- association and handover execution


def test_soft_handover_keeps_in_flight_bytes():
    assoc = AssociationTable(uplink={"U": "G1"})
    buf = RelayBuffer("U", 10_000_000)
    new, ev = execute_handover(
        assoc, HandoverDecision(HandoverAction.HANDOVER, "G2"), "soft", mobile="U", now=5.0,
        in_flight={"f": 100_000}, buffer=buf,
    )
    assert new.uplink["U"] == "G2" and assoc.uplink["U"] == "G1"
    assert ev.dropped_bytes == 0 and ev.buffered_bytes == 100_000
    # drained over the new link
    out = buffer_drain(buf, 1_000_000, 5.1)
    assert sum(n for _, n, _ in out) == 100_000 and buf.occupancy == 0


def test_hard_handover_drops_one_tick_of_load():
    # 10 Mb/s for one 100 ms tick is 125 kB
    gap = int(10e6 * 0.1 / 8)
    assert gap == 125_000
    assoc = AssociationTable(uplink={"U": "G1"})
    _, ev = execute_handover(
        assoc, HandoverDecision(HandoverAction.HANDOVER, "G2"), "hard", mobile="U", now=5.0,
        in_flight={"f": gap}, buffer=RelayBuffer("U", 10_000_000),
    )
    assert ev.dropped_bytes == 125_000 and ev.buffered_bytes == 0 and ev.mode == "hard"


def test_handover_to_current_server_is_noop():
    assoc = AssociationTable(uplink={"U": "G1"})
    new, ev = execute_handover(assoc, HandoverDecision(HandoverAction.HANDOVER, "G1"), "soft", mobile="U", now=1.0)
    assert new is assoc and ev is None


def test_stale_target_is_not_executed():
    assoc = AssociationTable(uplink={"U": "G1"})
    new, ev = execute_handover(
        assoc, HandoverDecision(HandoverAction.HANDOVER, "G2"), "soft", mobile="U", now=1.0,
        target_rssi_dbm=-79.0, rule=RULE,
    )
    assert new is assoc and ev is None


def test_execute_needs_a_handover_decision():
    with pytest.raises(ProtocolError):
        execute_handover(AssociationTable(), STAY, "soft", mobile="U", now=0.0)


def test_one_server_invariant():
    AssociationTable({"T1": "U1", "T2": "U2"}).check()
    with pytest.raises(SimulationAbort):
        AssociationTable({"T1": "U1", "T2": "U1"}).check()
    with pytest.raises(SimulationAbort):
        AssociationTable({"T1": "U1"}, pending={"U1": "U1"}).check()


# ---- flight change

TRACK = TrackPath("L", ((0.0, 0.0), (100_000.0, 0.0)))
POLICY = FlightPolicy.from_fractions(10_800.0, 75_000.0)


def test_policy_fractions():
    assert POLICY.endurance_reserve == pytest.approx(1080.0)
    assert POLICY.endurance_floor == pytest.approx(216.0)


def test_fresh_uav_needs_no_change():
    t = TrainState("T", "L", 1000.0, 80.0)
    old = UavState("U1", (1000.0, 0.0, 300.0), train="T")
    assoc = AssociationTable({"T": "U1"})
    assert not needs_flight_change(old, POLICY)
    assert flight_change(assoc, old, None, t, TRACK, POLICY) is assoc


def test_swap_waits_for_station_then_completes():
    t = TrainState("T", "L", 1000.0, 0.0, dwell_remaining=60.0)
    old = UavState("U1", (1000.0, 0.0, 300.0), train="T", endurance=1000.0)
    new = UavState("U2", (1000.0, 5.0, 300.0), train="T")
    assoc = AssociationTable({"T": "U1"}, uplink={"U1": "G"})
    mid = flight_change(assoc, old, new, t, TRACK, POLICY, at_station=False)
    assert mid.serving_uav["T"] == "U1" and mid.pending == {"U1": "U2"}
    done = flight_change(mid, old, new, t, TRACK, POLICY, at_station=True)
    assert done.serving_uav["T"] == "U2" and not done.pending and "U1" not in done.uplink


def test_hard_floor_forces_release_until_replacement_locks():
    t = TrainState("T", "L", 1000.0, 80.0)
    old = UavState("U1", (1000.0, 0.0, 300.0), train="T", endurance=100.0)
    far = UavState("U2", (7000.0, 0.0, 300.0), train="T")
    assoc = AssociationTable({"T": "U1"}, uplink={"U1": "G"})
    released = flight_change(assoc, old, far, t, TRACK, POLICY)
    assert "T" not in released.serving_uav and released.pending == {"U1": "U2"}
    near = UavState("U2", (1000.0, 3.0, 300.0), train="T")
    attached = flight_change(released, old, near, t, TRACK, POLICY)
    assert attached.serving_uav["T"] == "U2"


def test_no_replacement_below_floor_leaves_train_unserved():
    t = TrainState("T", "L", 1000.0, 80.0)
    old = UavState("U1", (1000.0, 0.0, 300.0), train="T", endurance=100.0)
    out = flight_change(AssociationTable({"T": "U1"}), old, None, t, TRACK, POLICY)
    assert out.serving_uav == {}


# ---- vertical handover

NETS = [StationNetwork("N1", "L", 35_000.0), StationNetwork("N0", "L", 35_100.0)]


def test_dwelling_train_uses_station_network():
    t = TrainState("T", "L", 35_000.0, 0.0, dwell_remaining=100.0)
    assert vertical_handover(t, NETS[:1]) == "N1"
    assert vertical_handover(t, NETS) == "N0"  # lowest id among several


def test_fast_train_keeps_relay():
    assert vertical_handover(TrainState("T", "L", 35_000.0, 83.3), NETS) is None


def test_no_station_network():
    assert vertical_handover(TrainState("T", "L", 35_000.0, 0.0), []) is None


# ---- A2A failover


def _uav(i, x):
    return UavState(i, (x, 0.0, 300.0))


def test_single_neighbor_becomes_relay():
    out = a2a_failover(AssociationTable(uplink={"U1": "G1"}), _uav("U1", 0.0), [_uav("U2", 3000.0)], 30_000.0)
    assert out.uplink["U1"] == "U2" and "U1" in out.relayed


def test_no_neighbor_in_range():
    assoc = AssociationTable(uplink={"U1": "G1"})
    assert a2a_failover(assoc, _uav("U1", 0.0), [_uav("U2", 40_000.0)], 30_000.0) is assoc
    assert a2a_failover(assoc, _uav("U1", 0.0), [], 30_000.0) is assoc


def test_nearest_neighbor_wins():
    out = a2a_failover(AssociationTable(), _uav("U1", 0.0), [_uav("U9", 8000.0), _uav("U5", 3000.0)], 30_000.0)
    assert out.uplink["U1"] == "U5"
    tie = a2a_failover(AssociationTable(), _uav("U1", 0.0), [_uav("U9", 3000.0), _uav("U5", -3000.0)], 30_000.0)
    assert tie.uplink["U1"] == "U5"


# ---- relay buffer

MB = 1_000_000


def test_enqueue_within_capacity():
    buf = RelayBuffer("U", 10 * MB)
    assert buffer_enqueue(buf, 1 * MB, 0.0) == 0
    assert buf.occupancy == 1 * MB


def test_enqueue_overflow_is_counted():
    buf = RelayBuffer("U", 10 * MB)
    assert buffer_enqueue(buf, 12 * MB, 0.0) == 2 * MB
    assert buf.occupancy == 10 * MB and buf.dropped == 2 * MB


def test_drain_one_megabyte_at_8mbps():
    buf = RelayBuffer("U", 10 * MB)
    buffer_enqueue(buf, 1 * MB, 0.0, "f")
    per_tick = int(8e6 * 0.1 / 8)
    ticks = 0
    while buf.occupancy:
        ticks += 1
        buffer_drain(buf, per_tick, ticks * 0.1)
    assert ticks == 10


def test_drain_is_fifo_with_queuing_delay():
    buf = RelayBuffer("U", 10 * MB)
    buffer_enqueue(buf, 100, 1.0, "a")
    buffer_enqueue(buf, 100, 2.0, "b")
    out = buffer_drain(buf, 150, 3.0)
    assert out == [("a", 100, 2.0), ("b", 50, 1.0)]
    assert buf.occupancy == 50


def test_drain_filtered_by_flow_keeps_order():
    buf = RelayBuffer("U", 10 * MB)
    for i, f in enumerate("abab"):
        buffer_enqueue(buf, 10, float(i), f)
    out = buffer_drain(buf, 100, 5.0, {"b"})
    assert [(f, n) for f, n, _ in out] == [("b", 10), ("b", 10)]
    assert [it[0] for it in buf.items] == ["a", "a"]


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3 * MB)), max_size=40), st.integers(0, 20 * MB))
def test_buffer_conservation(ops, cap):
    buf = RelayBuffer("U", cap)
    offered = delivered = dropped = 0
    for k, (push, n) in enumerate(ops):
        if push:
            offered += n
            dropped += buffer_enqueue(buf, n, float(k), "f")
        else:
            delivered += sum(b for _, b, _ in buffer_drain(buf, n, float(k)))
        assert 0 <= buf.occupancy <= cap
        assert offered == delivered + dropped + buf.occupancy
