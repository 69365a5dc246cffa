"""Orthogonal resource allocation: direction-split frequency plan, TDMA slots,
Walsh-code identification and position-prediction beam steering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .channel import angle_between_deg, unit_vector
from .errors import CodeCapacityError, IdentificationError, ScheduleConflictError
from .world import Point3, TrainState, UavState

ACCESS_MODES = ("tdma", "cdma", "sdma-tdma")

Band = Tuple[float, float]  # [low, high) in Hz, relative to the block start


@dataclass(frozen=True)
class FrequencyPlan:
    total_bandwidth: float
    sub_bands: Tuple[Band, Band]
    assignments: Mapping[str, Band]

    def band_of(self, train_id: str) -> Band:
        return self.assignments[train_id]

    def bandwidth_of(self, train_id: str) -> float:
        lo, hi = self.assignments[train_id]
        return hi - lo


def build_frequency_plan(total_bw: float, trains: Iterable[TrainState]) -> FrequencyPlan:
    """Lower half to direction 0, upper half to direction 1; trains inherit their
    direction's half whole."""
    if total_bw <= 0.0:
        raise ValueError("total bandwidth must be positive")
    half = total_bw / 2.0
    subs = ((0.0, half), (half, total_bw))
    return FrequencyPlan(total_bw, subs, {t.id: subs[t.direction] for t in sorted(trains, key=lambda t: t.id)})


def bands_overlap(a: Band, b: Band) -> bool:
    return a[0] < b[1] and b[0] < a[1]


# ------------------------------------------------------------------- Walsh


def walsh_matrix(order: int) -> np.ndarray:
    """Sylvester-Hadamard matrix of ``order`` (a power of two)."""
    if order < 1 or order & (order - 1):
        raise ValueError(f"Walsh order must be a power of two, got {order}")
    h = np.ones((1, 1), dtype=np.int64)
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def smallest_order(n: int) -> int:
    """Smallest power of two leaving row 0 unused for ``n`` entities."""
    order = 1
    while order < n + 1:
        order *= 2
    return order


@dataclass(frozen=True)
class CodeAssignment:
    order: int
    rows: Mapping[str, int]
    matrix: np.ndarray = field(repr=False, compare=False)

    def code(self, entity: str) -> np.ndarray:
        try:
            return self.matrix[self.rows[entity]]
        except KeyError:
            raise IdentificationError(f"no code assigned to {entity!r}") from None


def assign_codes(entities: Iterable[str], order: int) -> CodeAssignment:
    """Sorted ids onto ascending rows, skipping the all-ones row when there is room."""
    ids = sorted(set(entities))
    if len(ids) > order:
        raise CodeCapacityError(f"{len(ids)} entities need a Walsh order above {order}")
    start = 1 if len(ids) < order else 0
    return CodeAssignment(order, {e: start + i for i, e in enumerate(ids)}, walsh_matrix(order))


def cdma_spread(symbols: Mapping[str, int], assignment: CodeAssignment) -> np.ndarray:
    """Chip-synchronous sum of each entity's symbol times its code."""
    out = np.zeros(assignment.order, dtype=np.int64)
    for e, s in symbols.items():
        out += s * assignment.code(e)
    return out


def correlate(composite: np.ndarray, code: np.ndarray) -> float:
    return float(np.dot(composite, code)) / len(code)


def cdma_despread(composite: np.ndarray, assignment: CodeAssignment, entities: Optional[Iterable[str]] = None):
    """Recovered symbol per entity; raises IdentificationError for an unknown one."""
    names = sorted(assignment.rows) if entities is None else list(entities)
    return {e: correlate(composite, assignment.code(e)) for e in names}


# ---------------------------------------------------------------- TDMA/SDMA


def slots_per_tick(dt: float, slot_length: float) -> int:
    return max(1, int(round(dt / slot_length)))


def slot_owners(trains: Sequence[str], n_slots: int, tick: int = 0) -> List[str]:
    """Round-robin owners of a tick's slots; the start rotates with the tick."""
    if not trains:
        return []
    k = len(trains)
    base = tick * n_slots
    return [trains[(base + s) % k] for s in range(n_slots)]


def predict_position(position: float, speed: float, dt: float, direction: int = 0, length: float = math.inf) -> float:
    """Arc-length position one step ahead from the reported position and speed."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    p = position + speed * dt if direction == 0 else position - speed * dt
    return min(max(p, 0.0), length)


@dataclass(frozen=True)
class BeamEntry:
    uav: str
    slot: int
    owner: str
    predicted: Point3
    boresight: Point3


class BeamSchedule:
    """Per-slot UAV beam assignments; a second owner for one UAV slot is refused."""

    def __init__(self, entries: Iterable[BeamEntry] = ()):
        self._entries: Dict[Tuple[str, int], BeamEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: BeamEntry) -> None:
        key = (entry.uav, entry.slot)
        prev = self._entries.get(key)
        if prev is not None and prev.owner != entry.owner:
            raise ScheduleConflictError(
                f"UAV {entry.uav!r} slot {entry.slot} owned by {prev.owner!r} and {entry.owner!r}"
            )
        self._entries[key] = entry

    def entries(self) -> List[BeamEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def for_uav(self, uav: str) -> List[BeamEntry]:
        return [e for e in self.entries() if e.uav == uav]

    def __len__(self):
        return len(self._entries)


def sdma_beam_step(uav: UavState, predicted: Point3, slot: int, owner: str) -> BeamEntry:
    """Point ``uav``'s beam at the predicted train position for ``slot``."""
    return BeamEntry(uav.id, slot, owner, tuple(predicted), unit_vector(uav.position, predicted))


def pointing_error_deg(entry: BeamEntry, uav_position: Point3, actual: Point3) -> float:
    return angle_between_deg(entry.boresight, unit_vector(uav_position, actual))
