"""Bit-exact wire codec for the extended broadcast message.

Big-endian fixed layout; all offsets from the start of the frame:

    offset  size  field
    0       4     uid                  uint32
    4       4     obfuscated longitude int32, 1e-7 deg
    8       4     obfuscated latitude  int32, 1e-7 deg
    12      4     obfuscated altitude  int32, mm
    16      2     longitude velocity   int16, cm/s
    18      2     latitude velocity    int16, cm/s
    20      2     altitude velocity    int16, cm/s
    22      4     CS longitude         int32, 1e-7 deg
    26      4     CS latitude          int32, 1e-7 deg
    30      4     CS altitude          int32, mm
    34      4     timestamp            uint32, s
    38      1     emergency            uint8
    39      K     ephemeral key        K in {64, 96, 132, 140} per curve
    39+K    16    ciphertext
    55+K    32    tag

Total frame: 39 + K + 48 bytes (151 for 64-byte keys up to 227 for the
140-byte profile), well under the 2304-byte WiFi MTU, so a message always
fits one frame.
"""

import struct
from dataclasses import dataclass

from .crypto import CurveProfile, EncryptedLocationReport

_HEADER = struct.Struct(">IiiihhhiiiIB")
HEADER_LEN = _HEADER.size  # 39
WIFI_MTU = 2304

_I32 = (-(2 ** 31), 2 ** 31 - 1)
_I16 = (-(2 ** 15), 2 ** 15 - 1)
_U32 = (0, 2 ** 32 - 1)
_U8 = (0, 255)

_FIELD_RANGES = {
    "uid": _U32,
    "obf_lon_e7": _I32,
    "obf_lat_e7": _I32,
    "obf_alt_mm": _I32,
    "vel_lon_cms": _I16,
    "vel_lat_cms": _I16,
    "vel_alt_cms": _I16,
    "cs_lon_e7": _I32,
    "cs_lat_e7": _I32,
    "cs_alt_mm": _I32,
    "timestamp": _U32,
    "emergency": _U8,
}


def message_size(curve: CurveProfile) -> int:
    return HEADER_LEN + curve.report_len


@dataclass(frozen=True)
class RidMessage:
    """Broadcast payload in wire units (fixed-point integers)."""

    uid: int
    obf_lon_e7: int
    obf_lat_e7: int
    obf_alt_mm: int
    vel_lon_cms: int
    vel_lat_cms: int
    vel_alt_cms: int
    cs_lon_e7: int
    cs_lat_e7: int
    cs_alt_mm: int
    timestamp: int
    emergency: int
    report: EncryptedLocationReport

    @classmethod
    def from_physical(
        cls,
        uid: int,
        obf_lat: float,
        obf_lon: float,
        obf_alt_m: float,
        vel_enu_mps,
        cs_lat: float,
        cs_lon: float,
        cs_alt_m: float,
        timestamp: int,
        emergency: bool,
        report: EncryptedLocationReport,
    ) -> "RidMessage":
        ve, vn, vu = vel_enu_mps
        return cls(
            uid=uid,
            obf_lon_e7=round(obf_lon * 1e7),
            obf_lat_e7=round(obf_lat * 1e7),
            obf_alt_mm=round(obf_alt_m * 1000),
            vel_lon_cms=round(ve * 100),
            vel_lat_cms=round(vn * 100),
            vel_alt_cms=round(vu * 100),
            cs_lon_e7=round(cs_lon * 1e7),
            cs_lat_e7=round(cs_lat * 1e7),
            cs_alt_mm=round(cs_alt_m * 1000),
            timestamp=int(timestamp),
            emergency=int(bool(emergency)),
            report=report,
        )

    @property
    def obf_position(self) -> tuple[float, float, float]:
        """(lat deg, lon deg, alt m) of the disclosed location."""
        return self.obf_lat_e7 / 1e7, self.obf_lon_e7 / 1e7, self.obf_alt_mm / 1000.0

    @property
    def cs_position(self) -> tuple[float, float, float]:
        return self.cs_lat_e7 / 1e7, self.cs_lon_e7 / 1e7, self.cs_alt_mm / 1000.0


def encode(msg: RidMessage, curve: CurveProfile) -> bytes:
    """Serialise; raises ValueError naming any out-of-range field."""
    for name, (lo, hi) in _FIELD_RANGES.items():
        v = getattr(msg, name)
        if not isinstance(v, int) or not lo <= v <= hi:
            raise ValueError(f"field {name} out of range: {v!r} not in [{lo}, {hi}]")
    if len(msg.report.ephemeral_key) != curve.ephemeral_key_len:
        raise ValueError(
            f"field report: ephemeral key is {len(msg.report.ephemeral_key)} bytes, "
            f"{curve.name} requires {curve.ephemeral_key_len}"
        )
    head = _HEADER.pack(
        msg.uid,
        msg.obf_lon_e7,
        msg.obf_lat_e7,
        msg.obf_alt_mm,
        msg.vel_lon_cms,
        msg.vel_lat_cms,
        msg.vel_alt_cms,
        msg.cs_lon_e7,
        msg.cs_lat_e7,
        msg.cs_alt_mm,
        msg.timestamp,
        msg.emergency,
    )
    return head + msg.report.to_bytes()


def decode(data: bytes, curve: CurveProfile) -> RidMessage:
    """Field-exact inverse of :func:`encode`; frame length must match exactly."""
    expected = message_size(curve)
    if len(data) != expected:
        raise ValueError(f"frame must be {expected} bytes for {curve.name}, got {len(data)}")
    fields = _HEADER.unpack_from(data)
    report = EncryptedLocationReport.from_bytes(data[HEADER_LEN:], curve)
    return RidMessage(*fields, report=report)
