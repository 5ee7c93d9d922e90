"""Sealing primitives against an independent reimplementation.

The oracle below rebuilds the documented wire format from raw primitives
(hashlib/hmac plus AES-CTR) without touching mpsim internals, so the two
paths can only agree if both implement the format.
"""

import hashlib
import hmac
import struct

import pytest
from cryptography.hazmat.primitives.ciphers import Cipher
from cryptography.hazmat.primitives.ciphers.algorithms import AES
from cryptography.hazmat.primitives.ciphers.modes import CTR
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsim import sealing

PAGE = 4096


# -- oracle ---------------------------------------------------------------

def oracle_derive(seed: int, label: bytes, n: int) -> bytes:
    out = b""
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(b"mpsim-keygen|" + label + b"|" +
                              struct.pack("<qI", seed, counter)).digest()
        counter += 1
    return out[:n]


def oracle_seal(k_enc: bytes, k_mac: bytes, vpn: int, version: int,
                plaintext: bytes) -> tuple[bytes, bytes]:
    nonce = struct.pack("<II", vpn, version) + b"\x00" * 8
    ks = Cipher(AES(k_enc), CTR(nonce)).encryptor().update(
        b"\x00" * len(plaintext))
    ct = bytes(a ^ b for a, b in zip(plaintext, ks))
    tag = hmac.new(k_mac, struct.pack("<II", vpn, version) + ct,
                   hashlib.sha256).digest()[:16]
    return ct, tag


# Frozen vectors, precomputed with the oracle alone (seed 5, vpn 0x2a,
# version 3, plaintext = bytes(range(256)) * 16).
FROZEN_K_ENC = "89feab280e99558563f69d01cc4cbcfa"
FROZEN_K_MAC = "89d5410a0282850fbf59d18a7210f1f2"
FROZEN_CT_SHA256 = "19cf06db377f15cedd98fe01b3e20902006248f4e44f993f54d705cba2b0901d"
FROZEN_CT_HEAD = "0a90e93c93b8476777b7b48c1a1f0c30"
FROZEN_TAG = "0665d564cb24a17dd3a526138165f9e8"


def test_frozen_vector():
    keys = sealing.keygen(5)
    assert keys.k_enc.hex() == FROZEN_K_ENC
    assert keys.k_mac.hex() == FROZEN_K_MAC
    pt = bytes(range(256)) * 16
    ct, tag = sealing.seal_page(keys.k_enc, keys.k_mac, 0x2A, 3, pt)
    assert hashlib.sha256(ct).hexdigest() == FROZEN_CT_SHA256
    assert ct[:16].hex() == FROZEN_CT_HEAD
    assert tag.hex() == FROZEN_TAG
    assert sealing.unseal_page(keys.k_enc, keys.k_mac, 0x2A, 3, ct, tag) == pt


@given(seed=st.integers(0, 2 ** 32), vpn=st.integers(0, 0xFFFFF),
       version=st.integers(0, 1000), data=st.binary(min_size=1, max_size=PAGE))
@settings(max_examples=40, deadline=None)
def test_seal_matches_oracle(seed, vpn, version, data):
    keys = sealing.keygen(seed)
    assert keys.k_enc == oracle_derive(seed, b"enc", 16)
    assert keys.k_mac == oracle_derive(seed, b"mac", 16)
    got = sealing.seal_page(keys.k_enc, keys.k_mac, vpn, version, data)
    assert got == oracle_seal(keys.k_enc, keys.k_mac, vpn, version, data)


@given(vpn=st.integers(0, 0xFFFFF), version=st.integers(0, 64),
       data=st.binary(min_size=1, max_size=PAGE),
       bit_seed=st.integers(0, 2 ** 32))
@settings(max_examples=40, deadline=None)
def test_any_bit_flip_detected(vpn, version, data, bit_seed):
    keys = sealing.keygen(11)
    ct, tag = sealing.seal_page(keys.k_enc, keys.k_mac, vpn, version, data)
    bit = bit_seed % (len(ct) * 8)
    bad = bytearray(ct)
    bad[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(sealing.TagMismatch):
        sealing.unseal_page(keys.k_enc, keys.k_mac, vpn, version,
                            bytes(bad), tag)


def test_binding_to_vpn_and_version():
    keys = sealing.keygen(3)
    ct, tag = sealing.seal_page(keys.k_enc, keys.k_mac, 7, 2, b"\xaa" * PAGE)
    with pytest.raises(sealing.TagMismatch):
        sealing.unseal_page(keys.k_enc, keys.k_mac, 8, 2, ct, tag)
    with pytest.raises(sealing.TagMismatch):
        sealing.unseal_page(keys.k_enc, keys.k_mac, 7, 3, ct, tag)
    other = sealing.keygen(4)
    with pytest.raises(sealing.TagMismatch):
        sealing.unseal_page(other.k_enc, other.k_mac, 7, 2, ct, tag)


def test_tag_checked_before_decrypt():
    keys = sealing.keygen(3)
    ct, _ = sealing.seal_page(keys.k_enc, keys.k_mac, 1, 1, b"\x00" * PAGE)
    with pytest.raises(sealing.TagMismatch):
        sealing.unseal_page(keys.k_enc, keys.k_mac, 1, 1, ct, b"\x00" * 16)


def test_keygen_is_pure_and_distinct():
    a, b = sealing.keygen(100), sealing.keygen(100)
    assert a == b
    c = sealing.keygen(101)
    assert a.k_enc != c.k_enc and a.k_mac != c.k_mac
    assert a.k_enc != a.k_mac


def test_wrap_roundtrip():
    keys = sealing.keygen(9)
    blob = sealing.wrap_keys(keys.k_enc, keys.k_mac, keys.guardian_pub)
    assert len(blob) == sealing.WRAPPED_KEYS_LEN
    assert keys.k_enc not in blob and keys.k_mac not in blob
    assert sealing.unwrap_keys(blob, keys.guardian_priv) == (keys.k_enc,
                                                             keys.k_mac)
    # deterministic: same inputs, same blob
    assert sealing.wrap_keys(keys.k_enc, keys.k_mac, keys.guardian_pub) == blob


def test_unwrap_with_wrong_key_yields_garbage():
    keys = sealing.keygen(9)
    blob = sealing.wrap_keys(keys.k_enc, keys.k_mac, keys.guardian_pub)
    wrong = hashlib.sha256(b"not the monitor").digest()
    assert sealing.unwrap_keys(blob, wrong) != (keys.k_enc, keys.k_mac)


def test_metadata_signature():
    keys = sealing.keygen(1)
    sig = sealing.sign_metadata(keys.dev_sign_priv, b"payload")
    sealing.verify_metadata(keys.dev_sign_pub, b"payload", sig)
    with pytest.raises(sealing.BadMetadataSignature):
        sealing.verify_metadata(keys.dev_sign_pub, b"payloae", sig)
    with pytest.raises(sealing.BadMetadataSignature):
        sealing.verify_metadata(keys.dev_sign_pub, b"payload", sig[:-1] + b"\x00")
