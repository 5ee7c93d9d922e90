"""MPEL binary image format.

Header (little-endian): magic "MPEL", version u16, entry u32, segment count
u16.  Then one 18-byte record per segment: type u8, flags u8, vaddr u32,
filesz u32, memsz u32, offset u32.  Payload bytes follow the header table;
offsets index into the whole file.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

MAGIC = b"MPEL"
FORMAT_VERSION = 1
HEADER_FMT = "<4sHIH"
HEADER_LEN = struct.calcsize(HEADER_FMT)
SEG_FMT = "<BBIIII"
SEG_LEN = struct.calcsize(SEG_FMT)

PAGE = 4096


class SegType(enum.IntEnum):
    LOAD = 0
    SIGNATURE = 1
    TRAMPOLINE = 2
    METADATA = 3
    SIGAREA = 4


class SegFlags(enum.IntFlag):
    R = 1
    W = 2
    X = 4


class ImageFormatError(Exception):
    pass


@dataclass
class Segment:
    type: SegType
    flags: SegFlags
    vaddr: int
    memsz: int
    data: bytes = b""      # filesz bytes; memsz - filesz is zero-filled at load

    @property
    def filesz(self) -> int:
        return len(self.data)

    def page_span(self) -> range:
        """vpns covered by this segment."""
        first = self.vaddr // PAGE
        last = (self.vaddr + self.memsz + PAGE - 1) // PAGE
        return range(first, last)


@dataclass
class Image:
    entry: int
    segments: list[Segment] = field(default_factory=list)

    def find(self, kind: SegType) -> Segment | None:
        for seg in self.segments:
            if seg.type == kind:
                return seg
        return None

    def is_adapted(self) -> bool:
        return self.find(SegType.TRAMPOLINE) is not None


def serialize(image: Image) -> bytes:
    table = bytearray()
    payload = bytearray()
    base = HEADER_LEN + SEG_LEN * len(image.segments)
    for seg in image.segments:
        offset = base + len(payload) if seg.data else 0
        table += struct.pack(SEG_FMT, int(seg.type), int(seg.flags),
                             seg.vaddr, seg.filesz, seg.memsz, offset)
        payload += seg.data
    head = struct.pack(HEADER_FMT, MAGIC, FORMAT_VERSION, image.entry,
                       len(image.segments))
    return bytes(head + table + payload)


def parse(blob: bytes) -> Image:
    if len(blob) < HEADER_LEN:
        raise ImageFormatError("truncated header")
    magic, version, entry, count = struct.unpack_from(HEADER_FMT, blob, 0)
    if magic != MAGIC:
        raise ImageFormatError("bad magic")
    if version != FORMAT_VERSION:
        raise ImageFormatError(f"unsupported format version {version}")
    if len(blob) < HEADER_LEN + SEG_LEN * count:
        raise ImageFormatError("truncated segment table")
    segments = []
    cursor = HEADER_LEN + SEG_LEN * count
    for i in range(count):
        t, flags, vaddr, filesz, memsz, offset = struct.unpack_from(
            SEG_FMT, blob, HEADER_LEN + SEG_LEN * i)
        try:
            seg_type = SegType(t)
        except ValueError:
            raise ImageFormatError(f"unknown segment type {t}") from None
        if vaddr % PAGE != 0:
            raise ImageFormatError(f"segment {i} vaddr not page aligned")
        if filesz > memsz:
            raise ImageFormatError(f"segment {i} filesz exceeds memsz")
        # payload must sit exactly where serialize puts it: packed in table
        # order, offset 0 for empty segments
        if offset != (cursor if filesz else 0):
            raise ImageFormatError(f"segment {i} payload offset not canonical")
        if offset + filesz > len(blob):
            raise ImageFormatError(f"segment {i} payload out of range")
        data = blob[offset:offset + filesz] if filesz else b""
        cursor += filesz
        segments.append(Segment(type=seg_type, flags=SegFlags(flags),
                                vaddr=vaddr, memsz=memsz, data=data))
    if cursor != len(blob):
        raise ImageFormatError("trailing bytes after segment payload")
    _check_overlap(segments)
    return Image(entry=entry, segments=segments)


def _check_overlap(segments: list[Segment]) -> None:
    spans = []
    for seg in segments:
        if seg.memsz == 0:
            continue
        spans.append((seg.vaddr, seg.vaddr + seg.memsz))
    spans.sort()
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ImageFormatError("segments overlap in the address space")
