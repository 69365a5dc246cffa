"""Deterministic fixed-tick simulator of a UAV relay tier serving high-speed trains."""

from importlib import resources

from .engine import DelayBudget, Simulation, compute_delay, run, run_cellular_baseline
from .errors import ScenarioError, SimulationAbort, UasrError
from .metrics import COLUMNS, RECORD_SCHEMA_VERSION, MetricsReport
from .scenario import Scenario, digest, load, parse_and_validate, serialize

__version__ = "0.1.0"


def bundled_scenario(name: str) -> Scenario:
    """One of the scenario files shipped with the package, e.g. ``"a1"``."""
    text = resources.files(__package__).joinpath("scenarios", f"{name}.toml").read_text(encoding="utf-8")
    return parse_and_validate(text)


__all__ = [
    "COLUMNS",
    "DelayBudget",
    "MetricsReport",
    "RECORD_SCHEMA_VERSION",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "SimulationAbort",
    "UasrError",
    "bundled_scenario",
    "compute_delay",
    "digest",
    "load",
    "parse_and_validate",
    "run",
    "run_cellular_baseline",
    "serialize",
]
