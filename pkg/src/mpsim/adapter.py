"""Binary adapter: turn a plain MPEL image into a protected one.

Adaptation seals every file-backed LOAD page under (k_enc, k_mac) with
version 0, appends a SIGNATURE segment holding the per-page tags, a
TRAMPOLINE segment with the four-instruction start/resume shim, a METADATA
segment (signed header copy, original entry, wrapped keys, developer key),
and a SIGAREA bss segment where runtime tags live.  The output is a pure
function of (image, keys).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import imagefmt, sealing
from .imagefmt import Image, SegFlags, Segment, SegType
from .machine import (
    Op,
    SMC_PROCESS_RESUME,
    SMC_PROCESS_START,
    encode,
    encode_imm,
)

PAGE = imagefmt.PAGE

SIGAREA_ENTRIES = 4096
SIGAREA_ENTRY_LEN = 24              # vpn u32, version u32, tag 16B
SIGAREA_BYTES = SIGAREA_ENTRIES * SIGAREA_ENTRY_LEN

TRAMPOLINE_LEN = 16
RESUME_OFFSET = 8                   # byte offset of the resume entry point
META_PTR_OFFSET = TRAMPOLINE_LEN    # u32 metadata va, u32 metadata length

_SIG_RECORD = "<I16s"
_SIG_RECORD_LEN = struct.calcsize(_SIG_RECORD)
_META_FIXED = "<IH"                 # original entry, segment count


class AdapterError(Exception):
    pass


def trampoline_bytes() -> bytes:
    return (encode_imm(Op.SMC, SMC_PROCESS_START, 0) +
            encode(Op.HALT) +
            encode_imm(Op.SMC, SMC_PROCESS_RESUME, 0) +
            encode(Op.HALT))


@dataclass(frozen=True)
class Metadata:
    """Parsed METADATA segment. The signature covers entry, headers and keys."""
    original_entry: int
    headers: tuple[tuple[int, int, int, int, int], ...]  # type, flags, vaddr, filesz, memsz
    wrapped_keys: bytes
    dev_pub: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        out = struct.pack(_META_FIXED, self.original_entry, len(self.headers))
        for rec in self.headers:
            out += struct.pack(imagefmt.SEG_FMT, rec[0], rec[1], rec[2], rec[3], rec[4], 0)
        return out + self.wrapped_keys

    def serialize(self) -> bytes:
        return self.signed_payload() + self.dev_pub + self.signature


def parse_metadata(blob: bytes) -> Metadata:
    if len(blob) < struct.calcsize(_META_FIXED):
        raise AdapterError("metadata truncated")
    entry, count = struct.unpack_from(_META_FIXED, blob, 0)
    off = struct.calcsize(_META_FIXED)
    headers = []
    for _ in range(count):
        if off + imagefmt.SEG_LEN > len(blob):
            raise AdapterError("metadata header copy truncated")
        t, flags, vaddr, filesz, memsz, zero = struct.unpack_from(imagefmt.SEG_FMT, blob, off)
        if zero != 0:
            raise AdapterError("metadata header copy has a nonzero reserved field")
        headers.append((t, flags, vaddr, filesz, memsz))
        off += imagefmt.SEG_LEN
    need = sealing.WRAPPED_KEYS_LEN + 32 + 64
    if off + need != len(blob):
        raise AdapterError("metadata length mismatch")
    wrapped = blob[off:off + sealing.WRAPPED_KEYS_LEN]
    off += sealing.WRAPPED_KEYS_LEN
    dev_pub = blob[off:off + 32]
    signature = blob[off + 32:]
    return Metadata(original_entry=entry, headers=tuple(headers),
                    wrapped_keys=wrapped, dev_pub=dev_pub, signature=signature)


def load_pages(seg: Segment) -> list[tuple[int, bytes]]:
    """Split a LOAD segment's file content into (vpn, zero-padded page) pairs."""
    pages = []
    data = seg.data
    for i in range(0, len(data), PAGE):
        page = data[i:i + PAGE]
        if len(page) < PAGE:
            page = page + b"\x00" * (PAGE - len(page))
        pages.append(((seg.vaddr + i) // PAGE, page))
    return pages


def parse_signature_segment(blob: bytes) -> dict[int, bytes]:
    if len(blob) < 4:
        raise AdapterError("signature segment truncated")
    (count,) = struct.unpack_from("<I", blob, 0)
    if 4 + count * _SIG_RECORD_LEN > len(blob):
        raise AdapterError("signature records truncated")
    tags = {}
    for i in range(count):
        vpn, tag = struct.unpack_from(_SIG_RECORD, blob, 4 + i * _SIG_RECORD_LEN)
        tags[vpn] = tag
    return tags


def adapt(blob: bytes, keys: sealing.SealingKeys) -> bytes:
    image = imagefmt.parse(blob)
    if image.is_adapted():
        raise AdapterError("image is already adapted")
    loads = [s for s in image.segments if s.type == SegType.LOAD]
    if not loads:
        raise AdapterError("image has no LOAD segments")
    if len(image.segments) != len(loads):
        raise AdapterError("plain image may contain only LOAD segments")

    sealed_loads: list[Segment] = []
    tags: list[tuple[int, bytes]] = []
    for seg in loads:
        ct = bytearray()
        for vpn, page in load_pages(seg):
            page_ct, tag = sealing.seal_page(keys.k_enc, keys.k_mac, vpn, 0, page)
            ct += page_ct
            tags.append((vpn, tag))
        sealed_loads.append(Segment(type=SegType.LOAD, flags=seg.flags,
                                    vaddr=seg.vaddr,
                                    memsz=max(seg.memsz, len(ct)),
                                    data=bytes(ct)))

    sig_blob = struct.pack("<I", len(tags))
    for vpn, tag in sorted(tags):
        sig_blob += struct.pack(_SIG_RECORD, vpn, tag)

    # fresh pages above everything the original image owns
    top = max(s.page_span().stop for s in sealed_loads)
    tramp_va = top * PAGE
    sig_va = tramp_va + PAGE
    sig_pages = (len(sig_blob) + PAGE - 1) // PAGE
    meta_va = sig_va + sig_pages * PAGE
    seg_count = len(sealed_loads) + 4
    meta_len = (struct.calcsize(_META_FIXED) + imagefmt.SEG_LEN * seg_count +
                sealing.WRAPPED_KEYS_LEN + 32 + 64)
    meta_pages = (meta_len + PAGE - 1) // PAGE
    sigarea_va = meta_va + meta_pages * PAGE

    # the pointer after the shim is how the monitor finds the metadata; it
    # is untrusted and only as good as the signature check it leads to
    tramp_data = trampoline_bytes() + struct.pack("<II", meta_va, meta_len)
    tramp = Segment(type=SegType.TRAMPOLINE, flags=SegFlags.R | SegFlags.X,
                    vaddr=tramp_va, memsz=PAGE, data=tramp_data)
    sig = Segment(type=SegType.SIGNATURE, flags=SegFlags.R,
                  vaddr=sig_va, memsz=sig_pages * PAGE, data=sig_blob)
    sigarea = Segment(type=SegType.SIGAREA, flags=SegFlags.R | SegFlags.W,
                      vaddr=sigarea_va, memsz=SIGAREA_BYTES, data=b"")
    ordered = sealed_loads + [sig, tramp, None, sigarea]  # metadata patched below

    headers = []
    for seg in ordered:
        if seg is None:
            headers.append((int(SegType.METADATA), int(SegFlags.R), meta_va,
                            meta_len, meta_pages * PAGE))
        else:
            headers.append((int(seg.type), int(seg.flags), seg.vaddr,
                            seg.filesz, seg.memsz))

    wrapped = sealing.wrap_keys(keys.k_enc, keys.k_mac, keys.guardian_pub)
    meta = Metadata(original_entry=image.entry, headers=tuple(headers),
                    wrapped_keys=wrapped, dev_pub=keys.dev_sign_pub, signature=b"")
    signature = sealing.sign_metadata(keys.dev_sign_priv, meta.signed_payload())
    meta = Metadata(original_entry=meta.original_entry, headers=meta.headers,
                    wrapped_keys=wrapped, dev_pub=keys.dev_sign_pub,
                    signature=signature)
    meta_seg = Segment(type=SegType.METADATA, flags=SegFlags.R,
                       vaddr=meta_va, memsz=meta_pages * PAGE,
                       data=meta.serialize())
    assert meta_seg.filesz == meta_len

    segments = sealed_loads + [sig, tramp, meta_seg, sigarea]
    return imagefmt.serialize(Image(entry=tramp_va, segments=segments))


@dataclass
class VerifyReport:
    original_entry: int
    trampoline_va: int
    sigarea_va: int
    load_page_count: int


def verify_adapted(blob: bytes,
                   dev_pub: bytes | None = None,
                   guardian_priv: bytes | None = None) -> VerifyReport:
    """Structural, signature and per-page tag checks on an adapted image.

    Raises on the first problem: ImageFormatError for structure,
    BadMetadataSignature for the developer signature, TagMismatch (with the
    offending vpn) for page tags, AdapterError for everything else.
    """
    image = imagefmt.parse(blob)
    for kind in (SegType.SIGNATURE, SegType.TRAMPOLINE, SegType.METADATA,
                 SegType.SIGAREA):
        if sum(1 for s in image.segments if s.type == kind) != 1:
            raise AdapterError(f"adapted image needs exactly one {kind.name} segment")

    tramp = image.find(SegType.TRAMPOLINE)
    if tramp.data[:TRAMPOLINE_LEN] != trampoline_bytes():
        raise AdapterError("trampoline code does not match the protocol shim")
    if image.entry != tramp.vaddr:
        raise AdapterError("entry does not point at the trampoline")
    meta_seg = image.find(SegType.METADATA)
    if len(tramp.data) < META_PTR_OFFSET + 8 or \
            struct.unpack_from("<II", tramp.data, META_PTR_OFFSET) != \
            (meta_seg.vaddr, meta_seg.filesz):
        raise AdapterError("trampoline metadata pointer is wrong")

    meta = parse_metadata(meta_seg.data)
    sealing.verify_metadata(dev_pub if dev_pub is not None else meta.dev_pub,
                            meta.signed_payload(), meta.signature)

    outer = [(int(s.type), int(s.flags), s.vaddr, s.filesz, s.memsz)
             for s in image.segments]
    if tuple(outer) != meta.headers:
        raise AdapterError("outer segment table does not match the signed copy")

    sigarea = image.find(SegType.SIGAREA)
    if sigarea.memsz != SIGAREA_BYTES or sigarea.filesz != 0:
        raise AdapterError("tag area segment has the wrong shape")

    k_enc, k_mac = sealing.unwrap_keys(
        meta.wrapped_keys,
        guardian_priv if guardian_priv is not None else sealing.guardian_keypair()[0])

    tags = parse_signature_segment(image.find(SegType.SIGNATURE).data)
    count = 0
    for seg in image.segments:
        if seg.type != SegType.LOAD:
            continue
        for vpn, page in load_pages(seg):
            stored = tags.get(vpn)
            if stored is None:
                raise AdapterError(f"no tag recorded for vpn 0x{vpn:x}")
            if sealing.page_tag(k_mac, vpn, 0, page) != stored:
                raise sealing.TagMismatch(f"vpn=0x{vpn:x} version=0")
            count += 1
    if count != len(tags):
        raise AdapterError("signature segment lists tags for absent pages")

    return VerifyReport(original_entry=meta.original_entry,
                        trampoline_va=tramp.vaddr,
                        sigarea_va=sigarea.vaddr,
                        load_page_count=count)
