"""Page sealing primitives: keystream cipher, integrity tags, key wrap.

The sealed-page format is fixed so that golden files stay stable:

  keystream  = AES-128-CTR(k_enc, counter0 = vpn_u32le || version_u32le || 0^8)
  ciphertext = plaintext XOR keystream
  tag        = HMAC-SHA256(k_mac, vpn_u32le || version_u32le || ciphertext)[:16]

Key wrap is hybrid X25519 + HKDF-SHA256 with a deterministic ephemeral key so
that adaptation is a pure function of (image, keys).  Metadata signatures are
Ed25519.  The simulator ships a static monitor keypair; it is a test fixture,
not a secret.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher
from cryptography.hazmat.primitives.ciphers.algorithms import AES
from cryptography.hazmat.primitives.ciphers.modes import CTR

KEY_LEN = 16
TAG_LEN = 16
WRAPPED_KEYS_LEN = 64  # eph_pub(32) || xor-wrapped k_enc||k_mac (32)

# Static monitor identity. Fixed across builds so adapted images verify
# anywhere; real deployments would provision this per device.
_GUARDIAN_SEED = hashlib.sha256(b"mpsim static guardian keypair v1").digest()


class SealError(Exception):
    """Base class for sealing failures."""


class TagMismatch(SealError):
    """Ciphertext does not authenticate under (vpn, version)."""


class BadMetadataSignature(SealError):
    """Developer signature over image metadata failed to verify."""


def _nonce(vpn: int, version: int) -> bytes:
    return struct.pack("<II", vpn, version) + b"\x00" * 8


def keystream(k_enc: bytes, vpn: int, version: int, length: int) -> bytes:
    """Deterministic keystream for one sealed page."""
    if len(k_enc) != KEY_LEN:
        raise SealError("k_enc must be 16 bytes")
    enc = Cipher(AES(k_enc), CTR(_nonce(vpn, version))).encryptor()
    return enc.update(b"\x00" * length) + enc.finalize()


def page_tag(k_mac: bytes, vpn: int, version: int, ciphertext: bytes) -> bytes:
    if len(k_mac) != KEY_LEN:
        raise SealError("k_mac must be 16 bytes")
    mac = hmac.new(k_mac, struct.pack("<II", vpn, version) + ciphertext, hashlib.sha256)
    return mac.digest()[:TAG_LEN]


def seal_page(k_enc: bytes, k_mac: bytes, vpn: int, version: int,
              plaintext: bytes) -> tuple[bytes, bytes]:
    """Return (ciphertext, tag) for one page."""
    ct = bytes(a ^ b for a, b in zip(plaintext, keystream(k_enc, vpn, version, len(plaintext))))
    return ct, page_tag(k_mac, vpn, version, ct)


def unseal_page(k_enc: bytes, k_mac: bytes, vpn: int, version: int,
                ciphertext: bytes, tag: bytes) -> bytes:
    """Verify tag, then decrypt. Raises TagMismatch without decrypting."""
    expect = page_tag(k_mac, vpn, version, ciphertext)
    if not hmac.compare_digest(expect, tag):
        raise TagMismatch(f"vpn=0x{vpn:x} version={version}")
    return bytes(a ^ b for a, b in zip(ciphertext, keystream(k_enc, vpn, version, len(ciphertext))))


@dataclass(frozen=True)
class SealingKeys:
    """Key material for one adapted image."""
    k_enc: bytes
    k_mac: bytes
    dev_sign_priv: bytes   # Ed25519 private, raw 32 bytes
    dev_sign_pub: bytes    # Ed25519 public, raw 32 bytes
    guardian_priv: bytes   # X25519 private, raw 32 bytes
    guardian_pub: bytes    # X25519 public, raw 32 bytes


def _derive(seed: int, label: bytes, n: int) -> bytes:
    out = b""
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(b"mpsim-keygen|" + label + b"|" +
                              struct.pack("<qI", seed, counter)).digest()
        counter += 1
    return out[:n]


def guardian_keypair() -> tuple[bytes, bytes]:
    """The simulator's static monitor keypair as raw (priv, pub) bytes."""
    priv = X25519PrivateKey.from_private_bytes(_GUARDIAN_SEED)
    pub = priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return _GUARDIAN_SEED, pub


def keygen(seed: int) -> SealingKeys:
    """Derive a full key set from an integer seed. Pure function of the seed."""
    k_enc = _derive(seed, b"enc", KEY_LEN)
    k_mac = _derive(seed, b"mac", KEY_LEN)
    if k_enc == k_mac:  # cannot happen with distinct labels; guard anyway
        raise SealError("k_enc == k_mac")
    dev_seed = _derive(seed, b"dev-sign", 32)
    dev_priv = Ed25519PrivateKey.from_private_bytes(dev_seed)
    dev_pub = dev_priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    g_priv, g_pub = guardian_keypair()
    return SealingKeys(k_enc=k_enc, k_mac=k_mac,
                       dev_sign_priv=dev_seed, dev_sign_pub=dev_pub,
                       guardian_priv=g_priv, guardian_pub=g_pub)


def _hkdf_sha256(ikm: bytes, info: bytes, n: int) -> bytes:
    prk = hmac.new(b"\x00" * 32, ikm, hashlib.sha256).digest()
    out, block = b"", b""
    counter = 1
    while len(out) < n:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        out += block
        counter += 1
    return out[:n]


def wrap_keys(k_enc: bytes, k_mac: bytes, guardian_pub: bytes) -> bytes:
    """Wrap k_enc||k_mac to the monitor public key.

    The ephemeral X25519 key is derived from the wrapped material itself so the
    output is deterministic; confidentiality against the OS still holds because
    the OS knows neither k_enc nor k_mac.
    """
    eph_seed = hashlib.sha256(b"mpsim-wrap-eph|" + k_enc + k_mac).digest()
    eph_priv = X25519PrivateKey.from_private_bytes(eph_seed)
    eph_pub = eph_priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(guardian_pub))
    pad = _hkdf_sha256(shared, b"mpsim-keywrap|" + eph_pub, 32)
    body = bytes(a ^ b for a, b in zip(k_enc + k_mac, pad))
    return eph_pub + body


def unwrap_keys(blob: bytes, guardian_priv: bytes) -> tuple[bytes, bytes]:
    if len(blob) != WRAPPED_KEYS_LEN:
        raise SealError(f"wrapped key blob must be {WRAPPED_KEYS_LEN} bytes")
    eph_pub, body = blob[:32], blob[32:]
    priv = X25519PrivateKey.from_private_bytes(guardian_priv)
    shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    pad = _hkdf_sha256(shared, b"mpsim-keywrap|" + eph_pub, 32)
    keys = bytes(a ^ b for a, b in zip(body, pad))
    return keys[:KEY_LEN], keys[KEY_LEN:]


def sign_metadata(dev_sign_priv: bytes, payload: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(dev_sign_priv).sign(payload)


def verify_metadata(dev_sign_pub: bytes, payload: bytes, signature: bytes) -> None:
    try:
        Ed25519PublicKey.from_public_bytes(dev_sign_pub).verify(signature, payload)
    except Exception as exc:
        raise BadMetadataSignature(str(exc)) from None
