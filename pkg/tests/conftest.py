from __future__ import annotations

import functools
from dataclasses import replace

import pytest

from uasr import bundled_scenario, parse_and_validate, run


@functools.lru_cache(maxsize=None)
def cached_run(name: str, mode: str = "uasr", seed: int = 0):
    """Bundled scenario runs are shared between test modules; treat as read-only."""
    scn = replace(bundled_scenario(name), mode=mode)
    return run(scn, seed)


def scenario(text: str):
    return parse_and_validate(text)


MINIMAL = """
name = "minimal"

[[world.tracks]]
id = "L1"
vertices = [[0.0, 0.0], [10000.0, 0.0]]

[[world.trains]]
id = "T1"
track = "L1"

[[world.uavs]]
id = "U1"
train = "T1"

[[world.ground_stations]]
id = "G1"
position = [0.0, 2000.0]
"""


@pytest.fixture
def minimal_text():
    return MINIMAL


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
