from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MINIMAL, scenario
from uasr import ScenarioError, bundled_scenario, digest, parse_and_validate, serialize
from uasr.scenario import FlowSpec, StationSpec, TrackSpec, TrainSpec, UavSpec, WorldSpec, Scenario, TrafficSpec

GOLDEN = Path(__file__).parent / "golden" / "minimal.toml"


def test_minimal_matches_golden_text():
    assert serialize(scenario(MINIMAL)) == GOLDEN.read_text(encoding="utf-8")


def test_minimal_defaults():
    u = scenario(MINIMAL).world.uavs[0]
    assert (u.altitude, u.endurance, u.range) == (300.0, 10800.0, 75000.0)


def test_golden_round_trips():
    text = GOLDEN.read_text(encoding="utf-8")
    assert serialize(parse_and_validate(text)) == text


def test_unknown_track_reports_field_path():
    with pytest.raises(ScenarioError) as ei:
        scenario(MINIMAL.replace('track = "L1"', 'track = "L9"'))
    assert ("world.trains[0].track", "unknown track 'L9'") in ei.value.errors


def test_low_altitude_warns_only_in_strict_mode():
    text = MINIMAL.replace('train = "T1"\n', 'train = "T1"\naltitude = 50.0\n', 1)
    assert not [w for w in scenario(text).warnings if "altitude" in w]
    strict = scenario(text.replace('[[world.tracks]]', '[world]\nstrict_preset = true\n\n[[world.tracks]]', 1))
    assert any("altitude" in w and "100-500 m" in w for w in strict.warnings)


def test_syntax_error_has_line_and_column():
    with pytest.raises(ScenarioError) as ei:
        scenario('name = "x"\n[engine\n')
    (path, _), = ei.value.errors
    assert path.startswith("<syntax line 2, column")


def test_every_error_is_reported():
    text = MINIMAL.replace('track = "L1"', 'track = "L9"') + (
        '\n[engine]\ndt = 0.001\n\n[[traffic.flows]]\nid = "f"\ntrain = "T7"\nclass = "bulk"\nbogus = 1\n'
    )
    with pytest.raises(ScenarioError) as ei:
        scenario(text)
    paths = {p for p, _ in ei.value.errors}
    assert "traffic.flows[0].bogus" in paths
    # structural problems stop before semantic checks
    text = text.replace("bogus = 1\n", "")
    with pytest.raises(ScenarioError) as ei:
        scenario(text)
    paths = {p for p, _ in ei.value.errors}
    assert {"world.trains[0].track", "engine.dt", "traffic.flows[0].train", "traffic.flows[0].class"} <= paths


def test_type_errors_name_the_field():
    with pytest.raises(ScenarioError) as ei:
        scenario(MINIMAL.replace('id = "T1"', 'id = "T1"\nspeed = "fast"'))
    assert ei.value.errors[0][0] == "world.trains[0].speed"


def test_duplicate_ids_across_kinds():
    with pytest.raises(ScenarioError) as ei:
        scenario(MINIMAL.replace('id = "G1"', 'id = "T1"'))
    assert any("duplicate id" in r for _, r in ei.value.errors)


def test_update_interval_off_grid_is_a_warning():
    s = scenario(MINIMAL + "\n[engine]\nupdate_interval = 0.25\n")
    assert any("update_interval" in w for w in s.warnings)


def test_partial_tick_end_time_rejected():
    with pytest.raises(ScenarioError):
        scenario(MINIMAL + "\n[engine]\nend_time = 1.05\n")


@pytest.mark.parametrize("name", ["a1", "a2", "a3", "a7", "a10"])
def test_bundled_scenarios_round_trip(name):
    scn = bundled_scenario(name)
    again = parse_and_validate(serialize(scn))
    assert again == scn and digest(again) == digest(scn)


ident = st.text("ABCDEFGHJK0123456789", min_size=1, max_size=4)


@st.composite
def scenarios(draw):
    length = draw(st.floats(1_000.0, 200_000.0))
    stations = draw(st.lists(st.builds(StationSpec, st.floats(0.0, 1.0), st.floats(0.0, 600.0)), max_size=3))
    stations = [replace(s, position=s.position * length) for s in stations]
    n = draw(st.integers(0, 3))
    ids = draw(st.lists(ident, min_size=2 * n, max_size=2 * n, unique=True))
    trains = [
        TrainSpec("T" + ids[i], "L", draw(st.floats(0.0, 1.0)) * length, draw(st.floats(0.0, 97.0)), draw(st.sampled_from([0, 1])))
        for i in range(n)
    ]
    uavs = [
        UavSpec("U" + ids[n + i], train=t.id, altitude=draw(st.floats(100.0, 500.0)), endurance=draw(st.floats(600.0, 18000.0)))
        for i, t in enumerate(trains)
    ]
    flows = [FlowSpec("F" + t.id, t.id, draw(st.sampled_from(["control", "measurement", "user"])), draw(st.floats(0.0, 1e8))) for t in trains]
    world = WorldSpec(tracks=[TrackSpec("L", [(0.0, 0.0), (length, 0.0)], stations)], trains=trains, uavs=uavs)
    return Scenario(name=draw(ident), world=world, traffic=TrafficSpec(flows))


@settings(max_examples=100, deadline=None)
@given(scenarios())
def test_serialize_parse_round_trip(scn):
    text = serialize(scn)
    back = parse_and_validate(text)
    assert back == scn
    assert serialize(back) == text


@settings(max_examples=60, deadline=None)
@given(scenarios(), st.randoms(use_true_random=False))
def test_digest_ignores_list_order(scn, rnd):
    w = scn.world
    perm = replace(
        scn,
        world=replace(w, trains=rnd.sample(w.trains, len(w.trains)), uavs=rnd.sample(w.uavs, len(w.uavs))),
        traffic=replace(scn.traffic, flows=rnd.sample(scn.traffic.flows, len(scn.traffic.flows))),
    )
    assert digest(perm) == digest(scn)


@settings(max_examples=60, deadline=None)
@given(scenarios(), st.floats(0.01, 1.0))
def test_digest_tracks_content(scn, dt):
    other = replace(scn, engine=replace(scn.engine, dt=dt))
    assert (digest(other) == digest(scn)) == (other == scn)
