"""Image adaptation: sealing, metadata, and end-to-end verification.

Tag checks run through an independent HMAC recomputation so the adapter
and the verifier cannot share a bug.
"""

import hashlib
import hmac
import random
import struct

import pytest

from mpsim import adapter, imagefmt, progs, sealing
from mpsim.imagefmt import SegType

# Frozen pin: adapt() must stay a pure function of (image, seed).
GOLDEN_HELLO_SEED7 = \
    "9a78e401f53e5d65f51f3eca11dc5eb2f5410eda3800ebbc8b7c71e89cbba604"


@pytest.fixture(scope="module")
def hello_sealed() -> bytes:
    return adapter.adapt(progs.build("hello"), sealing.keygen(7))


def test_adapt_deterministic_golden(hello_sealed):
    assert hashlib.sha256(hello_sealed).hexdigest() == GOLDEN_HELLO_SEED7
    again = adapter.adapt(progs.build("hello"), sealing.keygen(7))
    assert again == hello_sealed


def test_adapted_shape(hello_sealed):
    img = imagefmt.parse(hello_sealed)
    assert img.is_adapted()
    kinds = {seg.type for seg in img.segments}
    assert kinds == {SegType.LOAD, SegType.SIGNATURE, SegType.TRAMPOLINE,
                     SegType.METADATA, SegType.SIGAREA}
    sigarea = img.find(SegType.SIGAREA)
    assert sigarea.filesz == 0                 # tag store is pure bss
    assert sigarea.memsz == adapter.SIGAREA_BYTES
    assert img.entry == img.find(SegType.TRAMPOLINE).vaddr


def test_verify_accepts_and_reports(hello_sealed):
    report = adapter.verify_adapted(hello_sealed)
    plain = imagefmt.parse(progs.build("hello"))
    assert report.original_entry == plain.entry
    assert report.load_page_count == sum(
        len(seg.page_span()) for seg in plain.segments
        if seg.type == SegType.LOAD and seg.data)


def test_no_plaintext_window_survives(hello_sealed):
    plain = progs.build("hello")
    img = imagefmt.parse(plain)
    for seg in img.segments:
        if seg.type != SegType.LOAD or len(seg.data) < 16:
            continue
        for off in range(0, len(seg.data) - 16, 4):
            assert seg.data[off:off + 16] not in hello_sealed


def test_tags_match_independent_hmac(hello_sealed):
    img = imagefmt.parse(hello_sealed)
    keys = sealing.keygen(7)
    tags = adapter.parse_signature_segment(img.find(SegType.SIGNATURE).data)
    seen = 0
    for seg in img.segments:
        if seg.type != SegType.LOAD:
            continue
        for vpn, page in adapter.load_pages(seg):
            expect = hmac.new(keys.k_mac,
                              struct.pack("<II", vpn, 0) + page,
                              hashlib.sha256).digest()[:16]
            assert tags[vpn] == expect
            seen += 1
    assert seen == len(tags) > 0


def test_unseal_with_unwrapped_keys(hello_sealed):
    img = imagefmt.parse(hello_sealed)
    meta = adapter.parse_metadata(img.find(SegType.METADATA).data)
    g_priv, _ = sealing.guardian_keypair()
    k_enc, k_mac = sealing.unwrap_keys(meta.wrapped_keys, g_priv)
    tags = adapter.parse_signature_segment(img.find(SegType.SIGNATURE).data)
    expected = {}
    for seg in imagefmt.parse(progs.build("hello")).segments:
        if seg.type == SegType.LOAD:
            for vpn, page in adapter.load_pages(seg):
                expected[vpn] = page
    checked = 0
    for seg in img.segments:
        if seg.type != SegType.LOAD:
            continue
        for vpn, page in adapter.load_pages(seg):
            out = sealing.unseal_page(k_enc, k_mac, vpn, 0, page, tags[vpn])
            assert out == expected[vpn]
            checked += 1
    assert checked == len(expected) > 0


def test_bit_flip_lands_on_the_right_page(hello_sealed):
    img = imagefmt.parse(hello_sealed)
    seg = next(s for s in img.segments if s.type == SegType.LOAD)
    vpn = seg.vaddr // 4096
    idx = hello_sealed.index(seg.data)
    bad = bytearray(hello_sealed)
    bad[idx + 100] ^= 0x40
    with pytest.raises(sealing.TagMismatch, match=f"vpn=0x{vpn:x}"):
        adapter.verify_adapted(bytes(bad))


def test_every_region_corruption_rejected(hello_sealed):
    rng = random.Random(2024)
    positions = sorted(rng.sample(range(len(hello_sealed)), 120))
    for pos in positions:
        bad = bytearray(hello_sealed)
        bad[pos] ^= 0xFF
        with pytest.raises((adapter.AdapterError, sealing.TagMismatch,
                            sealing.BadMetadataSignature,
                            imagefmt.ImageFormatError)):
            adapter.verify_adapted(bytes(bad))


def test_adapting_twice_rejected(hello_sealed):
    with pytest.raises(adapter.AdapterError):
        adapter.adapt(hello_sealed, sealing.keygen(7))


def test_verify_rejects_plain_image():
    with pytest.raises(adapter.AdapterError):
        adapter.verify_adapted(progs.build("hello"))
