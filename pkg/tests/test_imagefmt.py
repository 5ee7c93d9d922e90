"""Image container round trips and rejection of malformed files."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsim import imagefmt
from mpsim.imagefmt import Image, ImageFormatError, SegFlags, Segment, SegType


def two_seg_image() -> Image:
    return Image(entry=0x1000, segments=[
        Segment(SegType.LOAD, SegFlags.R | SegFlags.X, 0x1000, 0x1000,
                b"\x90" * 64),
        Segment(SegType.LOAD, SegFlags.R | SegFlags.W, 0x2000, 0x2000,
                b"data"),
    ])


def test_roundtrip():
    img = two_seg_image()
    back = imagefmt.parse(imagefmt.serialize(img))
    assert back.entry == img.entry
    assert len(back.segments) == 2
    for a, b in zip(back.segments, img.segments):
        assert (a.type, a.flags, a.vaddr, a.memsz, a.data) == \
               (b.type, b.flags, b.vaddr, b.memsz, b.data)


segments_strategy = st.lists(
    st.builds(
        Segment,
        type=st.sampled_from(list(SegType)),
        flags=st.sampled_from([SegFlags.R, SegFlags.R | SegFlags.W,
                               SegFlags.R | SegFlags.X]),
        vaddr=st.integers(0, 200).map(lambda n: n * 0x1000),
        memsz=st.integers(1, 0x2000),
        data=st.binary(max_size=64),
    ),
    max_size=5,
)


@given(entry=st.integers(0, 0xFFFFFFFF), segments=segments_strategy)
@settings(max_examples=60, deadline=None)
def test_roundtrip_property(entry, segments):
    fixed = []
    next_va = 0
    for seg in segments:
        # keep generated segments disjoint and well formed
        seg.vaddr = next_va
        seg.memsz = max(seg.memsz, len(seg.data))
        next_va = seg.vaddr + ((seg.memsz + 0xFFF) & ~0xFFF)
        fixed.append(seg)
    img = Image(entry=entry, segments=fixed)
    back = imagefmt.parse(imagefmt.serialize(img))
    assert back.entry == entry
    assert [(s.type, s.vaddr, s.memsz, s.data) for s in back.segments] == \
           [(s.type, s.vaddr, s.memsz, s.data) for s in fixed]


def test_is_adapted():
    img = two_seg_image()
    assert not img.is_adapted()
    img.segments.append(Segment(SegType.TRAMPOLINE, SegFlags.R | SegFlags.X,
                                0x5000, 0x1000, b"\x00" * 24))
    assert img.is_adapted()


def test_page_span():
    seg = Segment(SegType.LOAD, SegFlags.R, 0x2000, 0x1800, b"")
    assert list(seg.page_span()) == [2, 3]


@pytest.mark.parametrize("mangle,msg", [
    (lambda b: b[:3], "truncated header"),
    (lambda b: b"XXXX" + b[4:], "bad magic"),
    (lambda b: b[:4] + b"\xff\x00" + b[6:], "unsupported format version"),
    (lambda b: b[:10] + b"\xff\x00" + b[12:], "truncated segment table"),
])
def test_malformed_rejected(mangle, msg):
    blob = imagefmt.serialize(two_seg_image())
    with pytest.raises(ImageFormatError, match=msg):
        imagefmt.parse(mangle(blob))


def test_overlap_rejected():
    img = Image(entry=0, segments=[
        Segment(SegType.LOAD, SegFlags.R, 0x1000, 0x2000, b""),
        Segment(SegType.LOAD, SegFlags.R, 0x2000, 0x1000, b""),
    ])
    with pytest.raises(ImageFormatError, match="overlap"):
        imagefmt.parse(imagefmt.serialize(img))


def test_unaligned_vaddr_rejected():
    img = Image(entry=0, segments=[
        Segment(SegType.LOAD, SegFlags.R, 0x1004, 0x1000, b""),
    ])
    with pytest.raises(ImageFormatError, match="aligned"):
        imagefmt.parse(imagefmt.serialize(img))


def test_filesz_over_memsz_rejected():
    img = Image(entry=0, segments=[
        Segment(SegType.LOAD, SegFlags.R, 0x1000, 2, b"too big"),
    ])
    with pytest.raises(ImageFormatError, match="filesz"):
        imagefmt.parse(imagefmt.serialize(img))
