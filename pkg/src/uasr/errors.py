"""Exception hierarchy for the simulator."""


class UasrError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(UasrError):
    """A reference or parameter in the configuration is inconsistent."""


class DegenerateGeometryError(UasrError, ValueError):
    """Two points that must be distinct coincide."""


class ProtocolError(UasrError):
    """A protocol state machine received input that violates its contract."""


class CodeCapacityError(UasrError, ValueError):
    """More entities than rows in the Walsh matrix."""


class IdentificationError(UasrError, KeyError):
    """A despread was requested for an entity that holds no code."""


class ScheduleConflictError(UasrError, ValueError):
    """Two owners claimed the same UAV time slot."""


class SimulationAbort(UasrError):
    """An engine invariant was violated; the run cannot continue."""


class ScenarioError(UasrError):
    """Scenario text failed to parse or validate.

    ``errors`` holds ``(field_path, reason)`` pairs, all of them, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {reason}" for path, reason in self.errors]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))
