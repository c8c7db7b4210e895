"""Multi-party flows around the broadcast: registries, zone monitoring,
charging-station dispatch, and service-drone selection.

Services are in-process components; the secure channels of the real
deployment are modelled as trusted calls. Persistence is line-delimited
text, one record per line:

    public registry   "<uid> <registered_at>"
    private registry  "nfz <lat> <lon> <nfz_radius_m> <wa_radius_m>"
                      "station <id> <lat> <lon> <alt_m>"
"""

import math
from dataclasses import dataclass, field

from .codec import RidMessage
from .crypto import CurveProfile, decrypt_location
from .geo import enu_from_geodetic, horizontal_distance_m


@dataclass(frozen=True)
class NfzSpec:
    """No-fly disc plus the surrounding warning-area coverage ring."""

    center_lat: float
    center_lon: float
    nfz_radius_m: float
    wa_radius_m: float

    def __post_init__(self):
        if self.nfz_radius_m <= 0:
            raise ValueError("nfz_radius_m must be positive")
        if self.wa_radius_m < self.nfz_radius_m:
            raise ValueError("wa_radius_m must be >= nfz_radius_m")

    def horizontal_distance(self, position) -> float:
        """Meters from the zone center to a (lat, lon[, alt]) position."""
        return horizontal_distance_m((self.center_lat, self.center_lon), position)

    def inside_nfz(self, position) -> bool:
        return self.horizontal_distance(position) <= self.nfz_radius_m


@dataclass(frozen=True)
class ChargingStation:
    id: int
    lat: float
    lon: float
    alt_m: float = 0.0

    @property
    def position(self) -> tuple[float, float, float]:
        return self.lat, self.lon, self.alt_m


@dataclass(frozen=True)
class DetectionOutcome:
    """Per-disclosure zone classification from the two membership flags."""

    classification: str  # TP | FP | TN | FN
    disclosed_in_nfz: bool
    actual_in_nfz: bool


@dataclass(frozen=True)
class Disclosure:
    """TTP answer to a forwarded message: location only for real invasions."""

    uid: int
    location: tuple[float, float, float] | None

    @property
    def invading(self) -> bool:
        return self.location is not None


@dataclass
class PublicRegistry:
    """UID register anyone may query; one registration per drone."""

    entries: dict[int, int] = field(default_factory=dict)  # uid -> registered_at

    def save(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for uid in sorted(self.entries):
                fh.write(f"{uid} {self.entries[uid]}\n")

    @classmethod
    def load(cls, path) -> "PublicRegistry":
        reg = cls()
        with open(path, "r", encoding="ascii") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    uid, at = line.split()
                    reg.entries[int(uid)] = int(at)
                except ValueError:
                    raise ValueError(f"{path}: line {i}: malformed registry record") from None
        return reg


@dataclass
class PrivateRegistry:
    """Confidential records readable only through the TTP's operations."""

    nfz_specs: list[NfzSpec] = field(default_factory=list)
    stations: list[ChargingStation] = field(default_factory=list)

    def add_station(self, station: ChargingStation):
        if any(s.id == station.id for s in self.stations):
            raise ValueError(f"duplicate station id {station.id}")
        self.stations.append(station)

    def save(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for z in self.nfz_specs:
                fh.write(f"nfz {z.center_lat!r} {z.center_lon!r} {z.nfz_radius_m!r} {z.wa_radius_m!r}\n")
            for s in self.stations:
                fh.write(f"station {s.id} {s.lat!r} {s.lon!r} {s.alt_m!r}\n")

    @classmethod
    def load(cls, path) -> "PrivateRegistry":
        reg = cls()
        with open(path, "r", encoding="ascii") as fh:
            for i, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    if parts[0] == "nfz":
                        reg.nfz_specs.append(NfzSpec(*(float(v) for v in parts[1:5])))
                    elif parts[0] == "station":
                        reg.add_station(
                            ChargingStation(int(parts[1]), *(float(v) for v in parts[2:5]))
                        )
                    else:
                        raise ValueError
                except (ValueError, TypeError, IndexError):
                    raise ValueError(f"{path}: line {i}: malformed private record") from None
        return reg


def register_uav(registry: PublicRegistry, uid: int, ttp_public_key: bytes, now: int = 0) -> bytes:
    """Store a new UID and hand back the TTP public key for installation."""
    if uid in registry.entries:
        raise ValueError(f"uid {uid} already registered")
    registry.entries[uid] = int(now)
    return ttp_public_key


def observer_check_nfz(spec: NfzSpec, msg: RidMessage) -> RidMessage | None:
    """Zone-monitor triage of one decoded message.

    Forward to the TTP (return the message) when the disclosed location
    is inside the no-fly radius, boundary included; otherwise drop.
    """
    if spec.inside_nfz(msg.obf_position):
        return msg
    return None


def ttp_resolve_invasion(
    spec: NfzSpec, msg: RidMessage, sk: bytes, curve: CurveProfile
) -> Disclosure:
    """Decrypt a forwarded report and disclose accordingly.

    Real invasion: (uid, plaintext location). No invasion: uid only; the
    plaintext never leaves this call. Authentication failures propagate
    and nothing is disclosed.
    """
    packed = decrypt_location(msg.report, sk, curve)
    location = packed.to_geodetic()
    if spec.inside_nfz(location):
        return Disclosure(msg.uid, location)
    return Disclosure(msg.uid, None)


def classify_disclosure(spec: NfzSpec, true_pos, obf_pos) -> DetectionOutcome:
    """2x2 outcome of one disclosure against the no-fly disc."""
    disclosed = spec.inside_nfz(obf_pos)
    actual = spec.inside_nfz(true_pos)
    if disclosed and actual:
        label = "TP"
    elif disclosed:
        label = "FP"
    elif actual:
        label = "FN"
    else:
        label = "TN"
    return DetectionOutcome(label, disclosed, actual)


def in_scope(spec: NfzSpec, true_pos, obf_pos, rule: str = "either") -> bool:
    """Whether a disclosure counts towards the confusion matrix.

    rule "true": the actual position lies within the coverage radius
    (reception-range reading). rule "obfuscated": the disclosed one
    does. rule "either": at least one of them (default).
    """
    t = spec.horizontal_distance(true_pos) <= spec.wa_radius_m
    o = spec.horizontal_distance(obf_pos) <= spec.wa_radius_m
    if rule == "true":
        return t
    if rule == "obfuscated":
        return o
    if rule == "either":
        return t or o
    raise ValueError(f"unknown scope rule {rule!r}")


def _euclid3(a, b, ref: tuple[float, float]) -> float:
    pa = enu_from_geodetic(a[0], a[1], a[2], ref)
    pb = enu_from_geodetic(b[0], b[1], b[2], ref)
    return math.dist(pa, pb)


def nearest_station(stations: list[ChargingStation], z, origin=None) -> int:
    """Id of the station closest (3-D Euclidean) to a disclosed position.

    Distance ties go to the smallest id. ``origin`` fixes the tangent
    plane used for the metric; it defaults to the query position, which
    is fine for a single lookup, while simulation loops pass their run
    origin so distances stay mutually consistent.
    """
    if not stations:
        raise ValueError("no stations")
    ref = origin or (z[0], z[1])
    best = min(stations, key=lambda s: (_euclid3(s.position, z, ref), s.id))
    return best.id


def select_daas_uav(disclosed: list[tuple[int, tuple]], user, origin=None) -> int:
    """UID of the service drone whose disclosed position is nearest the user.

    Distance ties go to the smallest uid; ``origin`` as in
    :func:`nearest_station`.
    """
    if not disclosed:
        raise ValueError("no candidate UAVs")
    ref = origin or (user[0], user[1])
    best = min(disclosed, key=lambda item: (_euclid3(item[1], user, ref), item[0]))
    return best[0]
