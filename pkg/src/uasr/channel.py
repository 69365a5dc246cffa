"""Radio link models.

Everything here is a pure function over floats. Powers are in dBm, gains in
dBi, losses in dB, frequencies in Hz, distances in metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple

from .world import Point3, slant_range_and_elevation

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23
NEG_INF = float("-inf")


class LinkKind(str, Enum):
    A2G = "A2G"
    A2T = "A2T"
    A2A = "A2A"
    CELLULAR = "cellular"


class NodeKind(str, Enum):
    GS = "gs"
    UAV = "uav"
    TRAIN = "train"
    BS = "bs"


_KIND_OF_PAIR = {
    frozenset((NodeKind.GS, NodeKind.UAV)): LinkKind.A2G,
    frozenset((NodeKind.UAV, NodeKind.TRAIN)): LinkKind.A2T,
    frozenset((NodeKind.UAV,)): LinkKind.A2A,
    frozenset((NodeKind.BS, NodeKind.TRAIN)): LinkKind.CELLULAR,
}
_KIND_OF_TUPLE = {(a, b): k for pair, k in _KIND_OF_PAIR.items() for a in pair for b in pair if frozenset((a, b)) == pair}


_CARRIER_FIELD = {
    LinkKind.A2G: "a2g_carrier_hz",
    LinkKind.A2T: "a2t_carrier_hz",
    LinkKind.A2A: "a2a_carrier_hz",
    LinkKind.CELLULAR: "cellular_carrier_hz",
}
_BANDWIDTH_FIELD = {
    LinkKind.A2G: "a2g_bandwidth_hz",
    LinkKind.A2A: "a2a_bandwidth_hz",
    LinkKind.CELLULAR: "cellular_bandwidth_hz",
}


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget and threshold parameters shared by every link kind."""

    noise_floor_dbm: Optional[float] = None  # None: thermal noise of the allocated band
    noise_figure_db: float = 7.0
    temperature_k: float = 290.0
    a2g_carrier_hz: float = 2.0e9
    a2t_carrier_hz: float = 30.0e9
    a2a_carrier_hz: float = 2.4e9
    cellular_carrier_hz: float = 2.0e9
    a2g_bandwidth_hz: float = 50.0e6
    a2a_bandwidth_hz: float = 20.0e6
    cellular_bandwidth_hz: float = 20.0e6
    multipath_threshold_deg: float = 10.0
    multipath_penalty_db: float = 10.0
    min_sinr_db: float = -3.0
    sensitivity_dbm: float = -90.0
    handover_threshold_dbm: float = -80.0
    sidelobe_dbi: float = -10.0
    spectral_efficiency: float = 1.0
    # airborne and onboard equipment
    uav_tx_power_dbm: float = 30.0
    uav_a2g_gain_dbi: float = 6.0
    uav_a2g_beamwidth_deg: float = 30.0
    uav_a2t_gain_dbi: float = 20.0
    uav_a2t_beamwidth_deg: float = 60.0
    uav_a2a_gain_dbi: float = 10.0
    train_gain_dbi: float = 10.0
    train_beamwidth_deg: float = 120.0
    _noise: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.sensitivity_dbm < self.handover_threshold_dbm:
            raise ValueError("receiver sensitivity must be below the RSSI handover threshold")
        if not 0.0 < self.spectral_efficiency <= 1.0:
            raise ValueError("spectral efficiency must be in (0, 1]")

    def carrier(self, kind: LinkKind) -> float:
        return getattr(self, _CARRIER_FIELD[kind])

    def bandwidth(self, kind: LinkKind) -> float:
        if kind is LinkKind.A2T:
            raise ValueError("A2T bandwidth comes from the frequency plan")
        return getattr(self, _BANDWIDTH_FIELD[kind])

    def noise_dbm(self, bandwidth_hz: float) -> float:
        if self.noise_floor_dbm is not None:
            return self.noise_floor_dbm
        n = self._noise.get(bandwidth_hz)
        if n is None:
            n = self._noise[bandwidth_hz] = thermal_noise_dbm(bandwidth_hz, self.noise_figure_db, self.temperature_k)
        return n


def thermal_noise_dbm(bandwidth_hz: float, noise_figure_db: float = 0.0, temperature_k: float = 290.0) -> float:
    return 10.0 * math.log10(BOLTZMANN * temperature_k * bandwidth_hz * 1e3) + noise_figure_db


def fspl_db(range_m: float, frequency_hz: float) -> float:
    """Free-space path loss."""
    if range_m <= 0.0 or frequency_hz <= 0.0:
        raise ValueError("range and frequency must be positive")
    return 20.0 * math.log10(4.0 * math.pi * range_m * frequency_hz / SPEED_OF_LIGHT)


def multipath_penalty(elevation_deg: float, params: ChannelParams) -> float:
    """Step penalty for low-elevation links; the threshold itself is penalty-free."""
    if elevation_deg < params.multipath_threshold_deg:
        return params.multipath_penalty_db
    return 0.0


def doppler_shift(relative_speed: float, frequency_hz: float) -> float:
    """Shift for a line-of-sight closing speed (positive when closing)."""
    if abs(relative_speed) >= SPEED_OF_LIGHT:
        raise ValueError("relative speed must be below c")
    return frequency_hz * relative_speed / SPEED_OF_LIGHT


def beam_gain(pointing_error_deg: float, beamwidth_deg: float, peak_gain_dbi: float, sidelobe_dbi: float = -10.0) -> float:
    """Flat-top main lobe: peak gain out to half the beamwidth inclusive, floor beyond."""
    if beamwidth_deg <= 0.0:
        raise ValueError("beamwidth must be positive")
    if abs(pointing_error_deg) <= beamwidth_deg / 2.0:
        return peak_gain_dbi
    return min(sidelobe_dbi, peak_gain_dbi)


def angle_between_deg(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle between two 3-vectors; exactly 0 for parallel inputs."""
    cx = a[1] * b[2] - a[2] * b[1]
    cy = a[2] * b[0] - a[0] * b[2]
    cz = a[0] * b[1] - a[1] * b[0]
    dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    return math.degrees(math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), dot))


def shannon_capacity(sinr_db: float, bandwidth_hz: float, efficiency: float = 1.0) -> float:
    return efficiency * bandwidth_hz * math.log2(1.0 + 10.0 ** (sinr_db / 10.0))


def db_sum(values_dbm: Iterable[float]) -> float:
    """Power sum of dB quantities; ``-inf`` for an empty input."""
    total = 0.0
    for v in values_dbm:
        if v != NEG_INF:
            total += 10.0 ** (v / 10.0)
    return 10.0 * math.log10(total) if total > 0.0 else NEG_INF


class Beam(NamedTuple):
    boresight: Point3  # unit vector
    beamwidth_deg: float
    peak_gain_dbi: float


def unit_vector(src: Sequence[float], dst: Sequence[float]) -> Point3:
    dx, dy, dz = dst[0] - src[0], dst[1] - src[1], dst[2] - src[2]
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    return (dx / n, dy / n, dz / n)


class RadioNode(NamedTuple):
    """A transmitter or receiver at one instant.

    With no beams the antenna is isotropic at ``gain_dbi``; with beams, the gain
    toward a point is the best of the beams' gains.
    """

    id: str
    kind: NodeKind
    position: Point3
    velocity: Point3 = (0.0, 0.0, 0.0)
    tx_power_dbm: float = 0.0
    gain_dbi: float = 0.0
    beams: Tuple[Beam, ...] = ()

    def gain_toward(self, point: Sequence[float], sidelobe_dbi: float) -> float:
        if not self.beams:
            return self.gain_dbi
        d = unit_vector(self.position, point)
        return max(
            beam_gain(angle_between_deg(b.boresight, d), b.beamwidth_deg, b.peak_gain_dbi, sidelobe_dbi)
            for b in self.beams
        )


def link_kind(a: RadioNode, b: RadioNode) -> LinkKind:
    try:
        return _KIND_OF_PAIR[frozenset((a.kind, b.kind))]
    except KeyError:
        raise ValueError(f"no link kind between {a.kind.value} and {b.kind.value}") from None


class ChannelSample(NamedTuple):
    kind: LinkKind
    tx: str
    rx: str
    range_m: float
    elevation_deg: float
    carrier_hz: float
    path_loss_db: float
    tx_power_dbm: float
    tx_gain_dbi: float
    rx_gain_dbi: float
    multipath_db: float
    rssi_dbm: float
    interference_dbm: float
    interference_noise_dbm: float
    sinr_db: float
    doppler_hz: float
    bandwidth_hz: float
    capacity_bps: float
    blocked: bool = False


def received_power_dbm(tx: RadioNode, rx: RadioNode, params: ChannelParams, kind: Optional[LinkKind] = None) -> float:
    """RSSI at ``rx`` from ``tx`` with both antennas as currently pointed."""
    kind = kind or link_kind(tx, rx)
    rng, elev = slant_range_and_elevation(tx.position, rx.position)
    pl = fspl_db(rng, params.carrier(kind))
    mp = 0.0 if kind is LinkKind.A2A else multipath_penalty(abs(elev), params)
    sl = params.sidelobe_dbi
    return tx.tx_power_dbm + tx.gain_toward(rx.position, sl) + rx.gain_toward(tx.position, sl) - pl - mp


def _gain(node: RadioNode, ux: float, uy: float, uz: float, sl: float) -> float:
    # node.gain_toward with the unit direction already in hand
    if not node.beams:
        return node.gain_dbi
    best = NEG_INF
    for bs, bw, peak in node.beams:
        cx = bs[1] * uz - bs[2] * uy
        cy = bs[2] * ux - bs[0] * uz
        cz = bs[0] * uy - bs[1] * ux
        err = math.degrees(math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), bs[0] * ux + bs[1] * uy + bs[2] * uz))
        if bw <= 0.0:
            raise ValueError("beamwidth must be positive")
        g = peak if abs(err) <= bw / 2.0 else min(sl, peak)
        if g > best:
            best = g
    return best


def sample_link(
    tx: RadioNode,
    rx: RadioNode,
    params: ChannelParams,
    interferers: Iterable[RadioNode] = (),
    *,
    bandwidth_hz: Optional[float] = None,
    blocked: bool = False,
) -> ChannelSample:
    """Evaluate one link: geometry, budget, interference, Doppler and capacity."""
    try:
        kind = _KIND_OF_TUPLE[tx.kind, rx.kind]
    except KeyError:
        kind = link_kind(tx, rx)  # raises
    tp, rp = tx.position, rx.position
    dx, dy, dz = rp[0] - tp[0], rp[1] - tp[1], rp[2] - tp[2]
    horiz = math.hypot(dx, dy)
    rng = math.hypot(horiz, dz)
    if rng == 0.0:
        slant_range_and_elevation(tp, rp)  # raises
    elev = abs(math.degrees(math.atan2(dz, horiz)))  # seen from the lower end
    f = getattr(params, _CARRIER_FIELD[kind])
    bw = bandwidth_hz if bandwidth_hz is not None else params.bandwidth(kind)
    if f <= 0.0:
        raise ValueError("range and frequency must be positive")
    pl = 20.0 * math.log10(4.0 * math.pi * rng * f / SPEED_OF_LIGHT)  # fspl_db
    sl = params.sidelobe_dbi
    nrm = math.sqrt(dx * dx + dy * dy + dz * dz)
    ux, uy, uz = dx / nrm, dy / nrm, dz / nrm
    gt = _gain(tx, ux, uy, uz, sl)
    gr = _gain(rx, -ux, -uy, -uz, sl)
    mp = 0.0 if kind is LinkKind.A2A or elev >= params.multipath_threshold_deg else params.multipath_penalty_db
    rssi = tx.tx_power_dbm + gt + gr - pl - mp

    interference = db_sum(received_power_dbm(i, rx, params, kind) for i in interferers) if interferers else NEG_INF
    noise = params.noise_dbm(bw)
    inn = noise if interference == NEG_INF else db_sum((noise, interference))
    sinr = rssi - inn

    tv, rv = tx.velocity, rx.velocity
    closing = (tv[0] - rv[0]) * ux + (tv[1] - rv[1]) * uy + (tv[2] - rv[2]) * uz
    if abs(closing) >= SPEED_OF_LIGHT:
        doppler_shift(closing, f)  # raises
    dop = f * closing / SPEED_OF_LIGHT

    if blocked or rssi < params.sensitivity_dbm or sinr <= params.min_sinr_db:
        cap = 0.0
    else:
        cap = params.spectral_efficiency * bw * math.log2(1.0 + 10.0 ** (sinr / 10.0))  # shannon_capacity
    return ChannelSample(
        kind, tx.id, rx.id, rng, elev, f, pl, tx.tx_power_dbm, gt, gr, mp, rssi,
        interference, inn, sinr, dop, bw, cap, blocked,
    )


def tradeoff_power_ratio(distance_ratio: float, rate_ratio: float, snr_linear: float = 1000.0) -> float:
    """Transmit power multiplier that keeps ``rate_ratio`` times the Shannon rate
    at ``distance_ratio`` times the distance, starting from ``snr_linear``.

    Free space: received SNR scales with P / d^2, so the new link needs
    SNR' = (1 + snr)^rate_ratio - 1 and P'/P = d_ratio^2 * SNR' / snr.
    """
    if distance_ratio <= 0.0 or rate_ratio <= 0.0 or snr_linear <= 0.0:
        raise ValueError("ratios and SNR must be positive")
    needed = math.expm1(rate_ratio * math.log1p(snr_linear))
    return distance_ratio**2 * needed / snr_linear
