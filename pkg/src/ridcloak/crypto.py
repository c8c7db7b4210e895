"""Public-key encryption of packed locations for the broadcast side channel.

Integrated-encryption flow over NIST curves: ephemeral ECDH, HKDF-SHA256
key expansion into AES-128-CTR + HMAC-SHA256 keys, encrypt-then-MAC. The
report layout is fixed per curve profile: ephemeral key bytes, one
16-byte ciphertext block, a 32-byte tag.

Profiles whose backing curve is not available here (the pairing curves)
are size-emulated: same wire sizes and the same interface, backed by the
P-256 exchange with deterministic-length padding. Their security_bits
value is descriptive metadata, not a property of the emulation.
"""

import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

CIPHERTEXT_LEN = 16
TAG_LEN = 32
_PLAINTEXT_LEN = 12
_HKDF_INFO = b"ridcloak location report v1"


class AuthenticationError(Exception):
    """Report failed authentication (bad MAC, malformed or mismatched keys)."""


@dataclass(frozen=True)
class CurveProfile:
    """Wire profile of a supported curve."""

    name: str
    ephemeral_key_len: int
    security_bits: int
    backing: type
    point_len: int
    scalar_len: int

    @property
    def emulated(self) -> bool:
        return self.point_len != self.ephemeral_key_len

    @property
    def report_len(self) -> int:
        return self.ephemeral_key_len + CIPHERTEXT_LEN + TAG_LEN


CURVES: dict[str, CurveProfile] = {
    "BN254": CurveProfile("BN254", 64, 100, ec.SECP256R1, 64, 32),
    "NIST256": CurveProfile("NIST256", 64, 128, ec.SECP256R1, 64, 32),
    "NIST384": CurveProfile("NIST384", 96, 192, ec.SECP384R1, 96, 48),
    "NIST521": CurveProfile("NIST521", 132, 256, ec.SECP521R1, 132, 66),
    "BLS48556": CurveProfile("BLS48556", 140, 256, ec.SECP256R1, 64, 32),
}


def get_curve(name: str) -> CurveProfile:
    try:
        return CURVES[name]
    except KeyError:
        raise ValueError(f"unsupported curve {name!r}; known: {sorted(CURVES)}") from None


@dataclass(frozen=True)
class KeyPair:
    curve: str
    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True)
class PackedLocation:
    """Fixed-point location plaintext: 1e-7 deg lat/lon, mm altitude."""

    lat_e7: int
    lon_e7: int
    alt_mm: int

    def __post_init__(self):
        for name in ("lat_e7", "lon_e7", "alt_mm"):
            v = getattr(self, name)
            if not -(2 ** 31) <= v < 2 ** 31:
                raise ValueError(f"{name} out of int32 range")

    def pack(self) -> bytes:
        return struct.pack(">iii", self.lat_e7, self.lon_e7, self.alt_mm)

    @classmethod
    def unpack(cls, data: bytes) -> "PackedLocation":
        if len(data) != _PLAINTEXT_LEN:
            raise ValueError("packed location must be 12 bytes")
        return cls(*struct.unpack(">iii", data))

    @classmethod
    def from_geodetic(cls, lat: float, lon: float, alt_m: float) -> "PackedLocation":
        return cls(round(lat * 1e7), round(lon * 1e7), round(alt_m * 1000))

    def to_geodetic(self) -> tuple[float, float, float]:
        return self.lat_e7 / 1e7, self.lon_e7 / 1e7, self.alt_mm / 1000.0


@dataclass(frozen=True)
class EncryptedLocationReport:
    ephemeral_key: bytes
    ciphertext: bytes
    tag: bytes

    def __post_init__(self):
        if len(self.ciphertext) != CIPHERTEXT_LEN:
            raise ValueError("ciphertext must be 16 bytes")
        if len(self.tag) != TAG_LEN:
            raise ValueError("tag must be 32 bytes")

    @property
    def nbytes(self) -> int:
        return len(self.ephemeral_key) + CIPHERTEXT_LEN + TAG_LEN

    def to_bytes(self) -> bytes:
        return self.ephemeral_key + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data: bytes, curve: CurveProfile) -> "EncryptedLocationReport":
        if len(data) != curve.report_len:
            raise ValueError(f"report must be {curve.report_len} bytes for {curve.name}")
        k = curve.ephemeral_key_len
        return cls(data[:k], data[k : k + CIPHERTEXT_LEN], data[k + CIPHERTEXT_LEN :])


def _filler(n: int, rng) -> bytes:
    if n == 0:
        return b""
    if rng is not None:
        return rng.bytes(n)
    return os.urandom(n)


def _point_bytes(public_key) -> bytes:
    # raw x||y, i.e. the X9.62 uncompressed encoding without its 0x04 marker
    return public_key.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)[1:]


def _load_point(curve: CurveProfile, data: bytes):
    raw = data[: curve.point_len]
    if len(raw) != curve.point_len:
        raise ValueError("public key has the wrong length")
    return ec.EllipticCurvePublicKey.from_encoded_point(curve.backing(), b"\x04" + raw)


def kgen(curve: CurveProfile, rng=None) -> KeyPair:
    """Generate a keypair whose public key serialises to the profile length.

    Point generation always uses the OS CSPRNG; ``rng`` only feeds the
    length padding of size-emulated profiles.
    """
    priv = ec.generate_private_key(curve.backing())
    public = _point_bytes(priv.public_key())
    public += _filler(curve.ephemeral_key_len - len(public), rng)
    secret = priv.private_numbers().private_value.to_bytes(curve.scalar_len, "big")
    return KeyPair(curve.name, public, secret)


def _derive_keys(shared: bytes, ephemeral_field: bytes):
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=16 + 16 + 32,
        salt=None,
        info=_HKDF_INFO + ephemeral_field,
    ).derive(shared)
    return okm[:16], okm[16:32], okm[32:]


def _mac(key: bytes, data: bytes) -> bytes:
    h = hmac.HMAC(key, hashes.SHA256())
    h.update(data)
    return h.finalize()


def encrypt_location(
    x: PackedLocation, pk: bytes, curve: CurveProfile, rng=None
) -> EncryptedLocationReport:
    """Encrypt a packed location under the recipient public key.

    Fresh ephemeral key per call, so two encryptions of the same
    plaintext never share key material or ciphertext bytes.
    """
    if len(pk) != curve.ephemeral_key_len:
        raise ValueError(f"public key must be {curve.ephemeral_key_len} bytes for {curve.name}")
    try:
        recipient = _load_point(curve, pk)
    except ValueError as exc:
        raise ValueError(f"invalid public key: {exc}") from None
    eph_priv = ec.generate_private_key(curve.backing())
    eph_field = _point_bytes(eph_priv.public_key())
    eph_field += _filler(curve.ephemeral_key_len - len(eph_field), rng)

    shared = eph_priv.exchange(ec.ECDH(), recipient)
    enc_key, iv, mac_key = _derive_keys(shared, eph_field)
    block = bytes([_PLAINTEXT_LEN]) + x.pack() + b"\x00\x00\x00"
    encryptor = Cipher(algorithms.AES(enc_key), modes.CTR(iv)).encryptor()
    ciphertext = encryptor.update(block) + encryptor.finalize()
    return EncryptedLocationReport(eph_field, ciphertext, _mac(mac_key, ciphertext))


def decrypt_location(
    report: EncryptedLocationReport, sk: bytes, curve: CurveProfile
) -> PackedLocation:
    """Authenticate and decrypt a report; the MAC is checked first.

    Any failure along the way (malformed ephemeral point, wrong key,
    tampered bytes) surfaces as :class:`AuthenticationError` without
    releasing plaintext.
    """
    if len(report.ephemeral_key) != curve.ephemeral_key_len:
        raise AuthenticationError("authentication failure")
    try:
        eph_pub = _load_point(curve, report.ephemeral_key)
        priv = ec.derive_private_key(int.from_bytes(sk, "big"), curve.backing())
        shared = priv.exchange(ec.ECDH(), eph_pub)
    except ValueError:
        raise AuthenticationError("authentication failure") from None
    enc_key, iv, mac_key = _derive_keys(shared, report.ephemeral_key)
    h = hmac.HMAC(mac_key, hashes.SHA256())
    h.update(report.ciphertext)
    try:
        h.verify(report.tag)
    except InvalidSignature:
        raise AuthenticationError("authentication failure") from None
    decryptor = Cipher(algorithms.AES(enc_key), modes.CTR(iv)).decryptor()
    block = decryptor.update(report.ciphertext) + decryptor.finalize()
    if block[0] != _PLAINTEXT_LEN or block[13:] != b"\x00\x00\x00":
        raise AuthenticationError("authentication failure")
    return PackedLocation.unpack(block[1:13])


def save_key(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


def load_key(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()
