"""Simulated hardware: physical memory, two-level MMU, cores, user ISA.

32-bit virtual addresses, 4 KiB pages, two page-table levels indexed
10/10/12.  Virtual addresses at or above KERNEL_BASE translate through
ttbr1 and are reserved for the kernel; the kernel half is a linear map
(va = KERNEL_BASE + pa).  Monitor mode never translates: it reads and
writes physical memory directly.

The simulator takes one liberty against real A-profile hardware: SMC is
accepted directly from User mode (the protocol's start/resume trampolines
run as user code).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

PAGE_SIZE = 4096
PAGE_SHIFT = 12
L1_SHIFT = 22
L2_ENTRIES = 1024
KERNEL_BASE = 0x8000_0000
FRAME_COUNT_DEFAULT = 16384       # 64 MiB
TICK_DEFAULT = 1000               # user instructions per timer interrupt
IVT_STRIDE = 16                   # bytes per vector slot
INSTR_LEN = 4

# PTE: bit0 present, bit1 writable, bit2 user, bits 12..31 frame number.
PTE_PRESENT = 0x1
PTE_WRITABLE = 0x2
PTE_USER = 0x4


def pte_pack(frame: int, present: bool = True, writable: bool = False,
             user: bool = False) -> int:
    word = (frame << PAGE_SHIFT) & 0xFFFFF000
    if present:
        word |= PTE_PRESENT
    if writable:
        word |= PTE_WRITABLE
    if user:
        word |= PTE_USER
    return word


def pte_frame(word: int) -> int:
    return (word >> PAGE_SHIFT) & 0xFFFFF


class Mode(enum.Enum):
    USER = "user"
    KERNEL = "kernel"
    MONITOR = "monitor"


class ExceptionKind(enum.IntEnum):
    SYSCALL = 0
    PAGE_FAULT = 1
    PERMISSION_FAULT = 2
    UNDEFINED_INSTRUCTION = 3
    TIMER_INTERRUPT = 4
    MONITOR_CALL = 5


class Access(enum.Enum):
    READ = "r"
    WRITE = "w"
    EXECUTE = "x"


class MachineError(Exception):
    """Base class for simulator-level machine errors."""


class ConfigError(MachineError):
    pass


class PhysicalAccessError(MachineError):
    """Out-of-range physical address; indicates a simulator bug, never OS input."""


@dataclass
class Fault(Exception):
    """A faulting virtual access. Caught by the step loop or by kernel helpers."""
    kind: ExceptionKind
    va: int
    access: Access

    def __str__(self) -> str:
        return f"{self.kind.name} va=0x{self.va:08x} {self.access.value}"


class PhysicalMemory:
    """Flat frame-addressed byte store, dumpable for golden files."""

    def __init__(self, frame_count: int):
        if frame_count < 64 or frame_count > (1 << 20):
            raise ConfigError(f"frame_count {frame_count} out of supported range")
        self.frame_count = frame_count
        self.size = frame_count * PAGE_SIZE
        self.data = bytearray(self.size)

    def check(self, pa: int, length: int) -> None:
        if pa < 0 or length < 0 or pa + length > self.size:
            raise PhysicalAccessError(f"pa=0x{pa:x} len={length}")

    def read(self, pa: int, length: int) -> bytes:
        self.check(pa, length)
        return bytes(self.data[pa:pa + length])

    def write(self, pa: int, blob: bytes) -> None:
        self.check(pa, len(blob))
        self.data[pa:pa + len(blob)] = blob

    def read_u32(self, pa: int) -> int:
        self.check(pa, 4)
        return struct.unpack_from("<I", self.data, pa)[0]

    def write_u32(self, pa: int, value: int) -> None:
        self.check(pa, 4)
        struct.pack_into("<I", self.data, pa, value & 0xFFFFFFFF)

    def frame_bytes(self, frame: int) -> bytes:
        return self.read(frame * PAGE_SIZE, PAGE_SIZE)

    def frame_words(self, frame: int) -> tuple[int, ...]:
        self.check(frame * PAGE_SIZE, PAGE_SIZE)
        return struct.unpack_from(f"<{L2_ENTRIES}I", self.data, frame * PAGE_SIZE)

    def zero_frame(self, frame: int) -> None:
        self.write(frame * PAGE_SIZE, b"\x00" * PAGE_SIZE)

    def dump(self) -> bytes:
        return bytes(self.data)


# ---------------------------------------------------------------------------
# user ISA

class Op(enum.IntEnum):
    NOP = 0
    HALT = 1
    MOVI = 2      # rd <- imm16
    LD = 3        # rd <- mem32[r[ra]]
    ST = 4        # mem32[r[ra]] <- r[rs]
    ADD = 5       # rd <- r[ra] + r[rb]
    SYSCALL = 6   # id in r7, args r0..r5, ret r0
    SMC = 7       # monitor call, imm8
    ERET = 8      # not valid from user code
    JMP = 9       # pc <- page_base + imm16
    JZ = 10       # if r[rd] == 0: pc <- page_base + imm16


def encode(op: Op, a: int = 0, b: int = 0, c: int = 0) -> bytes:
    return bytes((op & 0xFF, a & 0xFF, b & 0xFF, c & 0xFF))


def encode_imm(op: Op, a: int, imm16: int) -> bytes:
    return bytes((op & 0xFF, a & 0xFF, imm16 & 0xFF, (imm16 >> 8) & 0xFF))


SMC_EXCEPTION = 1
SMC_PROCESS_START = 2
SMC_PROCESS_RESUME = 3
SMC_SET_PTS = 4
SMC_FREE_PGD = 5
SMC_MEMORY_MOVE = 6

# First word of a secure vector slot: an SMC #SMC_EXCEPTION instruction.
SECURE_SLOT_WORD = struct.unpack("<I", encode_imm(Op.SMC, SMC_EXCEPTION, 0))[0]
# Vector slots carry a handler descriptor word; the tag detects corruption.
DESCRIPTOR_TAG = 0xD0000000


def descriptor_word(kind: ExceptionKind) -> int:
    return DESCRIPTOR_TAG | int(kind)


@dataclass
class CpuCore:
    core_id: int
    regs: list[int] = field(default_factory=lambda: [0] * 8)
    sp: int = 0
    pc: int = 0
    mode: Mode = Mode.KERNEL
    elr: int = 0
    esr: tuple[ExceptionKind, int] | None = None
    ttbr0: int = 0                 # physical address of user-half root table
    ttbr1: int = 0
    vbar: int = 0
    trap_vm: bool = False
    sctlr_mmu: bool = False
    instr_count: int = 0           # user instructions executed on this core

    def reg(self, i: int) -> int:
        return self.regs[i]

    def set_reg(self, i: int, value: int) -> None:
        self.regs[i] = value & 0xFFFFFFFF


class StepResult(enum.Enum):
    RAN = "ran"
    HALTED = "halted"
    IDLE = "idle"


class Machine:
    """Cores plus memory plus trap plumbing.

    The kernel and monitor are host-level code: they are attached as hooks
    (`kernel_dispatch`, `guardian_exception`, `guardian_smc`, `vmcr_handler`)
    and touch simulated state only through mem_access / physical memory.
    """

    def __init__(self, frame_count: int = FRAME_COUNT_DEFAULT,
                 cores: int = 1, tick: int = TICK_DEFAULT):
        if cores < 1 or cores > 8:
            raise ConfigError("cores must be 1..8")
        if tick < 4:
            raise ConfigError("tick too small")
        self.mem = PhysicalMemory(frame_count)
        self.cores = [CpuCore(core_id=i) for i in range(cores)]
        self.tick = tick
        self.kernel_dispatch = None      # fn(core, kind) -> None
        self.guardian_exception = None   # fn(core, kind) -> "resumed" | "continue"
        self.guardian_smc = None         # fn(core, imm) -> None
        self.vmcr_handler = None         # fn(core, reg_name, value) -> bool applied
        self.translate_count = 0

    # -- translation ------------------------------------------------------

    def translate(self, core: CpuCore, va: int, access: Access,
                  mode: Mode | None = None) -> int:
        """Walk the active tree for va. Returns a physical address or raises Fault."""
        mode = mode or core.mode
        if mode is Mode.MONITOR:
            raise MachineError("monitor accesses are physical; translate is for user/kernel")
        if not core.sctlr_mmu:
            raise ConfigError("MMU is off; secure boot must enable it first")
        va &= 0xFFFFFFFF
        if va >= KERNEL_BASE:
            if mode is Mode.USER:
                raise Fault(ExceptionKind.PAGE_FAULT, va, access)
            root = core.ttbr1
        else:
            root = core.ttbr0
        if root == 0:
            raise Fault(ExceptionKind.PAGE_FAULT, va, access)
        l1 = self.mem.read_u32(root + ((va >> L1_SHIFT) & 0x3FF) * 4)
        if not l1 & PTE_PRESENT:
            raise Fault(ExceptionKind.PAGE_FAULT, va, access)
        l2_base = pte_frame(l1) * PAGE_SIZE
        leaf = self.mem.read_u32(l2_base + ((va >> PAGE_SHIFT) & 0x3FF) * 4)
        if not leaf & PTE_PRESENT:
            raise Fault(ExceptionKind.PAGE_FAULT, va, access)
        # permission bits are checked on the leaf only
        if mode is Mode.USER and not leaf & PTE_USER:
            raise Fault(ExceptionKind.PERMISSION_FAULT, va, access)
        if access is Access.WRITE and not leaf & PTE_WRITABLE:
            raise Fault(ExceptionKind.PERMISSION_FAULT, va, access)
        self.translate_count += 1
        return pte_frame(leaf) * PAGE_SIZE + (va & (PAGE_SIZE - 1))

    def mem_read(self, core: CpuCore, va: int, length: int,
                 mode: Mode | None = None, access: Access = Access.READ) -> bytes:
        """Read length bytes at va, splitting page-by-page."""
        out = bytearray()
        while length > 0:
            chunk = min(length, PAGE_SIZE - (va & (PAGE_SIZE - 1)))
            pa = self.translate(core, va, access, mode)
            out += self.mem.read(pa, chunk)
            va += chunk
            length -= chunk
        return bytes(out)

    def mem_write(self, core: CpuCore, va: int, blob: bytes,
                  mode: Mode | None = None) -> None:
        off = 0
        while off < len(blob):
            chunk = min(len(blob) - off, PAGE_SIZE - ((va + off) & (PAGE_SIZE - 1)))
            pa = self.translate(core, va + off, Access.WRITE, mode)
            self.mem.write(pa, blob[off:off + chunk])
            off += chunk

    # -- privileged state -------------------------------------------------

    VM_REGS = ("ttbr0", "ttbr1", "vbar", "sctlr_mmu")

    def write_vm_control(self, core: CpuCore, reg: str, value: int) -> bool:
        """Write a vm control register.

        Monitor mode writes directly.  Kernel mode with trap_vm set is routed
        to the monitor's vmcr handler, which decides whether to apply it.
        """
        if reg not in self.VM_REGS:
            raise ConfigError(f"unknown vm control register {reg!r}")
        if core.mode is Mode.MONITOR:
            self._apply_vm(core, reg, value)
            return True
        if core.mode is Mode.KERNEL:
            if not core.trap_vm:
                raise ConfigError("kernel vm write without trap_vm; boot is broken")
            if self.vmcr_handler is None:
                raise ConfigError("no vmcr handler attached")
            return self.vmcr_handler(core, reg, value)
        raise ConfigError("user mode cannot write vm control registers")

    def _apply_vm(self, core: CpuCore, reg: str, value: int) -> None:
        if reg == "sctlr_mmu":
            core.sctlr_mmu = bool(value)
        else:
            setattr(core, reg, value & 0xFFFFFFFF)

    # -- exceptions -------------------------------------------------------

    def take_exception(self, core: CpuCore, kind: ExceptionKind, detail: int,
                       elr: int) -> None:
        """Vector a user-mode exception through the active vector table."""
        core.esr = (kind, detail)
        core.elr = elr
        core.mode = Mode.KERNEL
        core.pc = core.vbar + int(kind) * IVT_STRIDE
        slot = self.mem_read(core, core.pc, 8, mode=Mode.KERNEL)
        word0, word1 = struct.unpack("<II", slot)
        if word0 == SECURE_SLOT_WORD:
            if self.guardian_exception is None:
                raise ConfigError("secure vector with no monitor attached")
            core.mode = Mode.MONITOR
            outcome = self.guardian_exception(core, kind)
            if outcome == "resumed":
                return       # monitor handled it entirely; core is back in user
            core.mode = Mode.KERNEL
            descriptor = word1
        else:
            descriptor = word0
        if descriptor & 0xFFFFFF00 != DESCRIPTOR_TAG or (descriptor & 0xFF) != int(kind):
            raise MachineError(f"vector table corrupt for {kind.name}")
        if self.kernel_dispatch is None:
            raise ConfigError("no kernel dispatch attached")
        self.kernel_dispatch(core, kind)

    def eret(self, core: CpuCore) -> None:
        if core.mode is not Mode.KERNEL:
            raise ConfigError("eret outside kernel mode")
        core.mode = Mode.USER
        core.pc = core.elr

    # -- fetch/execute ----------------------------------------------------

    def step(self, core: CpuCore) -> StepResult:
        """Execute one user instruction; dispatch any resulting exception."""
        if core.mode is not Mode.USER:
            return StepResult.IDLE
        pc = core.pc
        try:
            raw = self.mem_read(core, pc, INSTR_LEN, access=Access.EXECUTE)
        except Fault as f:
            self.take_exception(core, f.kind, f.va, elr=pc)
            return StepResult.RAN
        op, a, b, c = raw[0], raw[1], raw[2], raw[3]
        imm16 = b | (c << 8)
        core.instr_count += 1
        try:
            if op == Op.NOP:
                core.pc = pc + INSTR_LEN
            elif op == Op.HALT:
                return StepResult.HALTED
            elif op == Op.MOVI:
                core.set_reg(a & 7, imm16)
                core.pc = pc + INSTR_LEN
            elif op == Op.LD:
                addr = core.reg(b & 7)
                core.set_reg(a & 7, struct.unpack("<I", self.mem_read(core, addr, 4))[0])
                core.pc = pc + INSTR_LEN
            elif op == Op.ST:
                addr = core.reg(b & 7)
                self.mem_write(core, addr, struct.pack("<I", core.reg(a & 7)))
                core.pc = pc + INSTR_LEN
            elif op == Op.ADD:
                core.set_reg(a & 7, core.reg(b & 7) + core.reg(c & 7))
                core.pc = pc + INSTR_LEN
            elif op == Op.SYSCALL:
                core.pc = pc + INSTR_LEN
                self.take_exception(core, ExceptionKind.SYSCALL, core.reg(7), elr=core.pc)
                return StepResult.RAN
            elif op == Op.SMC:
                if self.guardian_smc is None:
                    raise ConfigError("no monitor attached")
                core.esr = (ExceptionKind.MONITOR_CALL, a)
                core.mode = Mode.MONITOR
                self.guardian_smc(core, a)
                return StepResult.RAN
            elif op == Op.JMP:
                core.pc = (pc & ~0xFFF) + imm16
            elif op == Op.JZ:
                core.pc = (pc & ~0xFFF) + imm16 if core.reg(a & 7) == 0 else pc + INSTR_LEN
            else:
                # includes ERET: not a user instruction
                self.take_exception(core, ExceptionKind.UNDEFINED_INSTRUCTION, op, elr=pc)
                return StepResult.RAN
        except Fault as f:
            # faulting instruction re-executes after the kernel repairs the page
            self.take_exception(core, f.kind, f.va, elr=pc)
            return StepResult.RAN
        self._post_tick(core, core.pc)
        return StepResult.RAN

    def _post_tick(self, core: CpuCore, resume_pc: int) -> None:
        if core.instr_count % self.tick == 0 and core.mode is Mode.USER:
            self.take_exception(core, ExceptionKind.TIMER_INTERRUPT, 0, elr=resume_pc)

    def run(self, core: CpuCore, max_instructions: int) -> StepResult:
        """Single-core convenience loop; stops on halt or budget exhaustion."""
        result = StepResult.IDLE
        for _ in range(max_instructions):
            result = self.step(core)
            if result is not StepResult.RAN:
                return result
        return result
