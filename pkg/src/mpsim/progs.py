"""User-space fixture programs, assembled at run time.

Every program is a plain image; the harness runs the adapter over it when a
scenario marks the process protected.  The same binary must behave the same
way in both modes, which is itself one of the things the suite checks.

Register conventions match the syscall ABI: id in r7, arguments in r0..r5,
result in r0.  The stack pointer is never touched by user code; each cloned
thread gets a distinct sp constant, which is also its identity for the
monitor's bookkeeping.
"""

from __future__ import annotations

import struct

from . import imagefmt
from .imagefmt import Image, SegFlags, Segment, SegType
from .machine import Op, encode, encode_imm

CODE_VA = 0x1000
DATA_VA = 0x2000

SYS = {
    "read": 1, "write": 2, "open": 3, "mmap": 4, "brk": 5, "munmap": 6,
    "futex": 7, "clone": 8, "exit": 9, "set_robust_list": 10,
    "set_tid_address": 11, "sigaction": 12, "sigaltstack": 13,
    "sigreturn": 14, "migrate_pages": 15, "getpid": 16,
}

FUTEX_WAIT = 0
FUTEX_WAKE = 1


class Asm:
    def __init__(self, org: int = CODE_VA):
        self.org = org
        self.out = bytearray()
        self.labels: dict[str, int] = {}
        self.fixups: list[tuple[int, Op, int, str]] = []

    def here(self) -> int:
        return self.org + len(self.out)

    def label(self, name: str) -> None:
        self.labels[name] = self.here()

    def ins(self, op: Op, a: int = 0, b: int = 0, c: int = 0) -> None:
        self.out += encode(op, a, b, c)

    def movi(self, rd: int, value: int) -> None:
        if not 0 <= value <= 0xFFFF:
            raise ValueError(f"movi immediate {value:#x} out of range")
        self.out += encode_imm(Op.MOVI, rd, value)

    def movi32(self, rd: int, value: int, tmp: int) -> None:
        """Build a 32-bit constant: no shifts in the ISA, so double 16 times."""
        self.movi(rd, (value >> 16) & 0xFFFF)
        for _ in range(16):
            self.add(rd, rd, rd)
        if value & 0xFFFF:
            self.movi(tmp, value & 0xFFFF)
            self.add(rd, rd, tmp)

    def ld(self, rd: int, ra: int) -> None:
        self.ins(Op.LD, rd, ra)

    def st(self, rs: int, ra: int) -> None:
        self.ins(Op.ST, rs, ra)

    def add(self, rd: int, ra: int, rb: int) -> None:
        self.ins(Op.ADD, rd, ra, rb)

    def jmp(self, label: str) -> None:
        self.fixups.append((len(self.out), Op.JMP, 0, label))
        self.out += b"\x00" * 4

    def jz(self, rd: int, label: str) -> None:
        self.fixups.append((len(self.out), Op.JZ, rd, label))
        self.out += b"\x00" * 4

    def movi_label(self, rd: int, label: str) -> None:
        self.fixups.append((len(self.out), Op.MOVI, rd, label))
        self.out += b"\x00" * 4

    def syscall(self, sid: str, r0: int | None = None, r1: int | None = None,
                r2: int | None = None, r3: int | None = None) -> None:
        for reg, val in ((0, r0), (1, r1), (2, r2), (3, r3)):
            if val is not None:
                self.movi(reg, val)
        self.movi(7, SYS[sid])
        self.ins(Op.SYSCALL)

    def write_const(self, va: int, length: int, fd: int = 1) -> None:
        self.syscall("write", r0=fd, r1=va, r2=length)

    def exit(self, code: int = 0) -> None:
        self.syscall("exit", r0=code)

    def spin(self, iterations: int, counter: int = 4, minus_one: int = 6,
             tmp: int = 5) -> None:
        """Busy loop: roughly 3 instructions per iteration."""
        self.movi32(minus_one, 0xFFFFFFFF, tmp)
        self.movi(counter, iterations)
        top = f"_spin{len(self.out)}"
        done = top + "e"
        self.label(top)
        self.add(counter, counter, minus_one)
        self.jz(counter, done)
        self.jmp(top)
        self.label(done)

    def finish(self) -> bytes:
        for off, op, a, name in self.fixups:
            target = self.labels[name]
            if op is Op.MOVI:
                imm = target            # absolute, labels live below 64k
            else:
                imm = target - ((self.org + off) & ~0xFFF)
            if not 0 <= imm <= 0xFFFF:
                raise ValueError(f"jump to {name} out of the 64k window")
            self.out[off:off + 4] = encode_imm(op, a, imm)
        return bytes(self.out)


def _image(code: bytes, data: bytes, data_memsz: int | None = None,
           entry: int = CODE_VA, data_va: int = DATA_VA) -> bytes:
    segs = [Segment(type=SegType.LOAD, flags=SegFlags.R | SegFlags.X,
                    vaddr=CODE_VA, data=code, memsz=len(code))]
    if data:
        segs.append(Segment(type=SegType.LOAD, flags=SegFlags.R | SegFlags.W,
                            vaddr=data_va, data=data,
                            memsz=data_memsz or len(data)))
    return imagefmt.serialize(Image(entry=entry, segments=segs))


def _pad(blob: bytes, size: int) -> bytes:
    if len(blob) > size:
        raise ValueError("data block overflow")
    return blob + b"\x00" * (size - len(blob))


# ---------------------------------------------------------------------------
# the programs


def hello(message: bytes = b"hello from userspace\n") -> bytes:
    a = Asm()
    a.write_const(DATA_VA, len(message))
    a.exit(0)
    return _image(a.finish(), message)


def spin_forever() -> bytes:
    a = Asm()
    a.label("top")
    a.jmp("top")
    return _image(a.finish(), b"")


def compute_write(loops: int = 2000) -> bytes:
    """Read two data pages in a loop, then report a checksum line.

    The checksum only depends on the image, so the output is a fixed string
    no matter how often the pages were swapped, squeezed, or migrated while
    the loop ran.
    """
    msg = b"checksum stable\n"
    page1 = _pad(b"\xa5" * 64, 0x1000)
    page2 = _pad(msg + bytes(range(200)), 0x1000)
    a = Asm()
    a.movi32(6, 0xFFFFFFFF, 5)
    a.movi(4, loops)
    a.movi(1, DATA_VA)
    a.movi(2, DATA_VA + 0x1000)
    a.label("top")
    a.ld(0, 1)
    a.ld(3, 2)
    a.add(4, 4, 6)
    a.jz(4, "done")
    a.jmp("top")
    a.label("done")
    a.write_const(DATA_VA + 0x1000, len(msg))
    a.exit(0)
    return _image(a.finish(), page1 + page2)


def secret_holder(secret: bytes = b"TOP-SECRET-PAYLOAD-0123456789ab") -> bytes:
    a = Asm()
    a.label("top")
    a.jmp("top")
    return _image(a.finish(), _pad(secret, 0x1000))


def touch_mmap(pages: int = 16) -> bytes:
    a = Asm()
    a.movi32(1, pages * 0x1000, 2)
    a.syscall("mmap", r0=0, r2=3)
    a.movi(1, 0x1000)              # page stride
    a.movi(4, pages)
    a.movi32(6, 0xFFFFFFFF, 5)
    a.label("top")
    a.st(4, 0)                     # store the counter into the current page
    a.add(0, 0, 1)
    a.add(4, 4, 6)
    a.jz(4, "done")
    a.jmp("top")
    a.label("done")
    a.write_const(DATA_VA, 8)
    a.exit(0)
    return _image(a.finish(), b"touched\n")


def brk_prog() -> bytes:
    a = Asm()
    a.syscall("brk", r0=0)                 # r0 <- current break
    a.movi(1, 0x2000)
    a.add(0, 0, 1)
    a.movi(7, SYS["brk"])
    a.ins(Op.SYSCALL)                      # extend by two pages
    a.movi32(4, 0xFFFFE000, 5)             # -0x2000
    a.add(1, 0, 4)                         # r1 = base of the fresh region
    a.movi(2, 1234)
    a.st(2, 1)
    a.ld(3, 1)
    a.jz(3, "bad")
    a.write_const(DATA_VA, 8)
    a.exit(0)
    a.label("bad")
    a.exit(1)
    return _image(a.finish(), b"heap ok\n")


def fresh_zero() -> bytes:
    a = Asm()
    a.syscall("mmap", r0=0, r1=0x1000, r2=3)
    a.ld(1, 0)                             # fresh anonymous page must read 0
    a.jz(1, "good")
    a.exit(1)
    a.label("good")
    a.movi(2, 0xBEEF)
    a.st(2, 0)
    a.write_const(DATA_VA, 6)
    a.exit(0)
    return _image(a.finish(), b"fresh\n")


def futex_pair() -> bytes:
    """Parent waits on a word; the cloned child sets it and wakes."""
    word = DATA_VA                 # futex word, starts 0
    msg = DATA_VA + 0x10           # "sync\n"
    child_sp = DATA_VA + 0x800
    a = Asm()
    a.movi(0, 0)                   # flags
    a.movi(1, 0)
    a.movi(2, child_sp)
    a.movi_label(3, "child")
    a.movi(7, SYS["clone"])
    a.ins(Op.SYSCALL)
    a.syscall("futex", r0=word, r1=FUTEX_WAIT, r2=0)
    a.write_const(msg, 5)
    a.exit(0)
    a.label("child")
    a.movi(1, word)
    a.movi(0, 1)
    a.st(0, 1)                     # word <- 1
    a.syscall("futex", r0=word, r1=FUTEX_WAKE, r2=1)
    a.exit(0)
    data = _pad(struct.pack("<I", 0) + b"\x00" * 12 + b"sync\n", 0x1000)
    return _image(a.finish(), data)


def robust_exit() -> bytes:
    """Parent exits holding a robust lock; the waiter learns the owner died."""
    futex_va = DATA_VA             # the lock word
    node_va = DATA_VA + 0x100      # robust node: (futex_va, next=0)
    child_sp = DATA_VA + 0x800
    a = Asm()
    a.syscall("set_robust_list", r0=node_va)
    a.movi(0, 0)
    a.movi(1, 0)
    a.movi(2, child_sp)
    a.movi_label(3, "child")
    a.movi(7, SYS["clone"])
    a.ins(Op.SYSCALL)
    a.spin(600)                    # let the child block first
    a.exit(0)                      # robust walk fires here
    a.label("child")
    a.syscall("futex", r0=futex_va, r1=FUTEX_WAIT, r2=0)
    a.jz(0, "clean")
    a.write_const(DATA_VA + 0x20, 10)      # woken with the owner-died flag
    a.exit(0)
    a.label("clean")
    a.write_const(DATA_VA + 0x30, 6)
    a.exit(0)
    data = bytearray(0x1000)
    struct.pack_into("<II", data, 0x100, futex_va, 0)
    data[0x20:0x2A] = b"recovered\n"
    data[0x30:0x36] = b"clean\n"
    return _image(a.finish(), bytes(data))


def cleartid() -> bytes:
    """Parent waits on the child's tid word; exit clears and wakes it."""
    ctid = DATA_VA + 0x40          # preset to 77
    child_sp = DATA_VA + 0x800
    a = Asm()
    a.movi(0, 1)                   # CLONE_CHILD_CLEARTID
    a.movi(1, ctid)
    a.movi(2, child_sp)
    a.movi_label(3, "child")
    a.movi(7, SYS["clone"])
    a.ins(Op.SYSCALL)
    a.syscall("futex", r0=ctid, r1=FUTEX_WAIT, r2=77)
    a.movi(1, ctid)
    a.ld(0, 1)
    a.jz(0, "cleared")
    a.exit(1)
    a.label("cleared")
    a.write_const(DATA_VA + 0x50, 9)
    a.exit(0)
    a.label("child")
    a.exit(0)
    data = bytearray(0x1000)
    struct.pack_into("<I", data, 0x40, 77)
    data[0x50:0x59] = b"tid gone\n"
    return _image(a.finish(), bytes(data))


def signal_prog(signum: int = 5, loops: int = 3000) -> bytes:
    alt_base = DATA_VA + 0x800
    a = Asm()
    a.movi_label(1, "handler")
    a.movi(0, signum)
    a.movi(7, SYS["sigaction"])
    a.ins(Op.SYSCALL)
    a.syscall("sigaltstack", r0=alt_base, r1=0x200)
    a.spin(loops)
    a.write_const(DATA_VA + 0x10, 10)
    a.exit(0)
    a.label("handler")
    a.write_const(DATA_VA, 5)
    a.syscall("sigreturn")
    a.ins(Op.HALT)                 # unreachable: sigreturn never falls through
    data = bytearray(0x1000)
    data[0:5] = b"ding\n"
    data[0x10:0x1A] = b"main done\n"
    return _image(a.finish(), bytes(data))


def semantic_io() -> bytes:
    """Open a path whose string straddles a page boundary, read, echo."""
    path_va = DATA_VA + 0xFF8      # crosses into the next data page
    buf_va = DATA_VA + 0x1100
    a = Asm()
    a.syscall("open", r0=path_va)
    a.movi(3, 0)
    a.add(3, 3, 0)                 # keep fd in r3
    a.movi(7, SYS["read"])
    a.movi(1, buf_va)
    a.movi(2, 16)
    a.movi(0, 0)
    a.add(0, 0, 3)
    a.ins(Op.SYSCALL)
    a.write_const(buf_va, 16)
    a.exit(0)
    data = bytearray(0x2000)
    path = b"/in/f.bin\x00"
    data[0xFF8:0xFF8 + len(path)] = path
    return _image(a.finish(), bytes(data))


def write_once(count: int = 16, delay: int = 400) -> bytes:
    """Spin, one mediated write, one trailing marker write."""
    a = Asm()
    a.spin(delay)
    a.write_const(DATA_VA, count)
    a.write_const(DATA_VA + 0x40, 5)
    a.exit(0)
    data = bytearray(0x1000)
    data[0:count] = bytes(range(0x41, 0x41 + count))
    data[0x40:0x45] = b"done\n"
    return _image(a.finish(), bytes(data))


def migrate_self(rounds: int = 4) -> bytes:
    a = Asm()
    a.movi(4, rounds)
    a.movi32(6, 0xFFFFFFFF, 5)
    a.label("top")
    a.syscall("migrate_pages")
    a.add(4, 4, 6)
    a.jz(4, "done")
    a.jmp("top")
    a.label("done")
    a.write_const(DATA_VA, 8)
    a.exit(0)
    return _image(a.finish(), _pad(b"settled\n", 0x1000))


def bss_touch() -> bytes:
    """The zero-fill region past the file bytes must read as zero."""
    bss_word = DATA_VA + 0x1008
    a = Asm()
    a.movi(1, bss_word)
    a.ld(0, 1)
    a.jz(0, "good")
    a.exit(1)
    a.label("good")
    a.write_const(DATA_VA, 7)
    a.exit(0)
    return _image(a.finish(), b"bss ok\n", data_memsz=0x2000)


def getpid_echo() -> bytes:
    a = Asm()
    a.syscall("getpid")
    a.movi(1, DATA_VA + 0x20)
    a.st(0, 1)
    a.write_const(DATA_VA, 4)
    a.exit(0)
    return _image(a.finish(), _pad(b"pid\n", 0x1000))


REGISTRY = {
    "hello": hello,
    "spin_forever": spin_forever,
    "compute_write": compute_write,
    "secret_holder": secret_holder,
    "touch_mmap": touch_mmap,
    "brk_prog": brk_prog,
    "fresh_zero": fresh_zero,
    "futex_pair": futex_pair,
    "robust_exit": robust_exit,
    "cleartid": cleartid,
    "signal_prog": signal_prog,
    "semantic_io": semantic_io,
    "write_once": write_once,
    "migrate_self": migrate_self,
    "bss_touch": bss_touch,
    "getpid_echo": getpid_echo,
}


def build(name: str, **params) -> bytes:
    if name not in REGISTRY:
        raise KeyError(f"unknown fixture program {name!r}")
    return REGISTRY[name](**params)
