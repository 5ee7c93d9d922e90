"""The Guardian: monitor-mode TCB that owns all page-table writes.

The kernel never stores to page tables, vector tables, or protected frames;
it submits update batches, traps vm-control writes, and asks for mediated
copies.  The Guardian validates each request against per-frame bookkeeping
(FrameInfo), per-process records (SensitiveProcessInfo), and the capability
list derived from suspended system calls.

Entry points mirror the monitor ABI: vmcr_trap, exception_entry, set_pts,
free_pgd, memory_move, process_start, process_resume.  Everything else is
internal.  Fatal integrity failures raise GuardianDenied(fatal_pgd=...) so
the kernel's top-level handlers can tear the process down; the Guardian
itself never unwinds kernel state.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import adapter, imagefmt, sealing
from .machine import (
    Access,
    CpuCore,
    ExceptionKind,
    Fault,
    KERNEL_BASE,
    Machine,
    Mode,
    PAGE_SHIFT,
    PAGE_SIZE,
    PTE_PRESENT,
    PTE_USER,
    PTE_WRITABLE,
    SMC_PROCESS_RESUME,
    SMC_PROCESS_START,
    pte_frame,
    pte_pack,
)

CPGD_MAGIC = 0x0000_0001          # placeholder cloak root before the real one
BATCH_LIMIT = 16
ROBUST_WALK_LIMIT = 64
PATH_MAX = 4096
FRAMEINFO_BYTES = 8
SIGAREA_SLOT = adapter.SIGAREA_ENTRY_LEN
SIGAREA_ENTRIES = adapter.SIGAREA_ENTRIES

SYS_READ = 1
SYS_WRITE = 2
SYS_OPEN = 3
SYS_MMAP = 4
SYS_BRK = 5
SYS_MUNMAP = 6
SYS_FUTEX = 7
SYS_CLONE = 8
SYS_EXIT = 9
SYS_SET_ROBUST_LIST = 10
SYS_SET_TID_ADDRESS = 11
SYS_SIGACTION = 12
SYS_SIGALTSTACK = 13
SYS_SIGRETURN = 14
SYS_MIGRATE_PAGES = 15
SYS_GETPID = 16

CLONE_CHILD_CLEARTID = 0x1


class FrameKind(enum.IntEnum):
    FREE = 0
    PLAIN = 1
    PAGE_TABLE = 2
    IVT = 3
    GUARDIAN = 4
    SENSITIVE_USER = 5
    CLOAK_CIPHERTEXT = 6


@dataclass
class FrameInfo:
    kind: FrameKind = FrameKind.FREE
    owner: int = 0            # pgd root physical address, 0 if unowned
    vpn: int = 0
    refcount: int = 0

    def pack(self) -> bytes:
        word = (int(self.kind) | (self.refcount & 0xFFFF) << 4 |
                ((self.owner >> PAGE_SHIFT) & 0xFFFFF) << 20 |
                (self.vpn & 0xFFFFF) << 40)
        return struct.pack("<Q", word)

    @classmethod
    def unpack(cls, blob: bytes) -> "FrameInfo":
        (word,) = struct.unpack("<Q", blob)
        return cls(kind=FrameKind(word & 0xF),
                   refcount=(word >> 4) & 0xFFFF,
                   owner=((word >> 20) & 0xFFFFF) << PAGE_SHIFT,
                   vpn=(word >> 40) & 0xFFFFF)


def frame_table_bytes(frame_count: int) -> int:
    """Bookkeeping cost of the frame table for a physical memory size."""
    return frame_count * FRAMEINFO_BYTES


@dataclass
class Capability:
    cap_id: int
    addr: int
    size: int | None          # None until a lazy string length is resolved
    rw: str                   # "r": kernel may read, "w": kernel may write
    life: tuple[str, int]     # ("ephemeral", sp) or ("long", stack_base)
    kind: str = "plain"       # "plain" | "path" | "robust_list"

    def covers(self, va: int, length: int) -> bool:
        if self.size is None:
            return False
        return self.addr <= va and va + length <= self.addr + self.size


@dataclass
class SavedContext:
    regs: list[int]
    sp: int
    pc: int
    kind: ExceptionKind | None       # None for a freshly cloned thread
    syscall_id: int = 0
    syscall_args: tuple[int, ...] = ()


@dataclass
class SensitiveProcessInfo:
    pgd: int
    keys: tuple[bytes, bytes]                    # (k_enc, k_mac)
    vmas: list[tuple[int, int, str]]             # (start, end, "ro"/"rw")
    trampoline_vpn: int
    resume_va: int
    original_entry: int
    sigarea_base: int                            # va of the tag area
    load_vpns: set[int]
    c_pgd: int = 0
    versions: dict[int, int] = field(default_factory=dict)
    saved: dict[int, SavedContext] = field(default_factory=dict)
    caps: list[Capability] = field(default_factory=list)
    threads: dict[int, dict] = field(default_factory=dict)   # sp -> info
    signal_stack: dict[int, list[SavedContext]] = field(default_factory=dict)
    handlers: dict[int, int] = field(default_factory=dict)   # signum -> pc
    altstacks: dict[int, tuple[int, int]] = field(default_factory=dict)  # sp -> (base, size)
    ever_mapped: set[int] = field(default_factory=set)
    double_mapped: set[int] = field(default_factory=set)
    pinned_vpns: set[int] = field(default_factory=set)
    next_cap_id: int = 1
    killed: bool = False

    def vma_perm(self, va: int) -> str | None:
        for start, end, perm in self.vmas:
            if start <= va < end:
                return perm
        return None

    def sigarea_vpns(self) -> range:
        first = self.sigarea_base // PAGE_SIZE
        return range(first, first + (adapter.SIGAREA_BYTES // PAGE_SIZE))


@dataclass
class PteUpdate:
    root: int                 # physical address of the target tree's root
    vpn: int
    entry: int                # packed leaf word; 0 unmaps
    table_frame: int | None = None    # kernel-donated frame for a missing L2
    cloak_of: int | None = None       # bind this fresh root as cloak of pgd


class GuardianDenied(Exception):
    def __init__(self, reason: str, fatal_pgd: int | None = None):
        super().__init__(reason)
        self.reason = reason
        self.fatal_pgd = fatal_pgd


class InvariantViolation(Exception):
    pass


@dataclass
class MoveResult:
    status: str               # "ok" | "need_page" | "denied" | "nodes"
    moved: int = 0
    fault_va: int = 0
    reason: str = ""
    nodes: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class RootInfo:
    kind: str                 # "kernel" | "pgd" | "cpgd"
    owner: int = 0            # pgd pa for cpgd roots
    tables: set[int] = field(default_factory=set)   # L2 table frames


class Guardian:
    """Monitor-mode state and ABI. Physical access only; never allocates
    kernel-managed memory; one static scratch root in its reserved frames."""

    def __init__(self, machine: Machine, metrics, log):
        self.machine = machine
        self.mem = machine.mem
        self.metrics = metrics
        self.log = log
        self.frames = [FrameInfo() for _ in range(machine.mem.frame_count)]
        self.roots: dict[int, RootInfo] = {}
        self.sensitive: dict[int, SensitiveProcessInfo] = {}
        self.cpgd_index: dict[int, int] = {}
        self.kernel_hooks = None
        self.kernel_root = 0
        self.linear_l2_first = 0      # first master L2 table frame
        self.secure_vbar = 0
        self.normal_vbar = 0
        self.guardian_priv = sealing.guardian_keypair()[0]
        self.move_log: list[tuple[int, int, int, str, int]] = []
        self.audit_every_entry = True
        self.pending_kills: list[tuple[int, str]] = []
        # every bank and every restore, so a test can pair them up
        self.bank_trace: list[dict] = []
        self.resume_trace: list[dict] = []

    # ------------------------------------------------------------------
    # small physical helpers (monitor mode: no translation)

    def _linear_leaf_pa(self, frame: int) -> int:
        l2 = self.linear_l2_first + (frame >> 10)
        return l2 * PAGE_SIZE + (frame & 0x3FF) * 4

    def _hide_from_linear(self, frame: int) -> None:
        pa = self._linear_leaf_pa(frame)
        if self.mem.read_u32(pa) & PTE_PRESENT:
            self.mem.write_u32(pa, 0)
            self.frames[frame].refcount -= 1

    def _restore_linear(self, frame: int, writable: bool = True) -> None:
        pa = self._linear_leaf_pa(frame)
        if not self.mem.read_u32(pa) & PTE_PRESENT:
            self.frames[frame].refcount += 1
        self.mem.write_u32(pa, pte_pack(frame, writable=writable))

    def _linear_set_writable(self, frame: int, writable: bool) -> None:
        pa = self._linear_leaf_pa(frame)
        word = self.mem.read_u32(pa)
        if word & PTE_PRESENT:
            word = word | PTE_WRITABLE if writable else word & ~PTE_WRITABLE
            self.mem.write_u32(pa, word)

    def _leaf_slot(self, root: int, vpn: int) -> int | None:
        """Physical address of the leaf slot for vpn under root, if the L2 exists."""
        l1 = self.mem.read_u32(root + (vpn >> 10) * 4)
        if not l1 & PTE_PRESENT:
            return None
        return pte_frame(l1) * PAGE_SIZE + (vpn & 0x3FF) * 4

    def _leaf(self, root: int, vpn: int) -> int:
        slot = self._leaf_slot(root, vpn)
        return self.mem.read_u32(slot) if slot is not None else 0

    def _user_walk_pa(self, spi: SensitiveProcessInfo, va: int) -> int | None:
        leaf = self._leaf(spi.pgd, va >> PAGE_SHIFT)
        if not leaf & PTE_PRESENT:
            return None
        return pte_frame(leaf) * PAGE_SIZE + (va & (PAGE_SIZE - 1))

    def _user_read(self, spi: SensitiveProcessInfo, va: int, length: int) -> bytes | None:
        out = bytearray()
        while length > 0:
            pa = self._user_walk_pa(spi, va)
            if pa is None:
                return None
            chunk = min(length, PAGE_SIZE - (va & (PAGE_SIZE - 1)))
            out += self.mem.read(pa, chunk)
            va += chunk
            length -= chunk
        return bytes(out)

    def _user_write(self, spi: SensitiveProcessInfo, va: int, blob: bytes) -> bool:
        off = 0
        while off < len(blob):
            pa = self._user_walk_pa(spi, va + off)
            if pa is None:
                return False
            chunk = min(len(blob) - off, PAGE_SIZE - ((va + off) & (PAGE_SIZE - 1)))
            self.mem.write(pa, blob[off:off + chunk])
            off += chunk
        return True

    # ------------------------------------------------------------------
    # SIGAREA: open-addressed (vpn, version, tag) records in user space

    def _sigarea_slot_va(self, spi: SensitiveProcessInfo, vpn: int) -> int | None:
        """Find the slot for vpn (existing or first empty probe slot)."""
        for probe in range(SIGAREA_ENTRIES):
            idx = (vpn + probe) % SIGAREA_ENTRIES
            va = spi.sigarea_base + idx * SIGAREA_SLOT
            raw = self._user_read(spi, va, 8)
            if raw is None:
                return None
            slot_vpn, version = struct.unpack("<II", raw)
            if version == 0 or slot_vpn == vpn:
                return va
        return None      # table full: caller treats as fatal

    def _sigarea_lookup(self, spi: SensitiveProcessInfo, vpn: int) -> tuple[int, bytes] | None:
        va = self._sigarea_slot_va(spi, vpn)
        if va is None:
            return None
        raw = self._user_read(spi, va, SIGAREA_SLOT)
        slot_vpn, version = struct.unpack("<II", raw[:8])
        if version == 0 or slot_vpn != vpn:
            return None
        return version, raw[8:]

    def _sigarea_store(self, spi: SensitiveProcessInfo, vpn: int, version: int,
                       tag: bytes) -> None:
        va = self._sigarea_slot_va(spi, vpn)
        if va is None:
            raise GuardianDenied("tag area exhausted", fatal_pgd=spi.pgd)
        self._user_write(spi, va, struct.pack("<II", vpn, version) + tag)

    def _sigarea_clear(self, spi: SensitiveProcessInfo, vpn: int) -> None:
        va = self._sigarea_slot_va(spi, vpn)
        if va is not None:
            raw = self._user_read(spi, va, 8)
            if raw and struct.unpack("<II", raw)[0] == vpn and struct.unpack("<II", raw)[1] != 0:
                self._user_write(spi, va, b"\x00" * SIGAREA_SLOT)
        spi.versions.pop(vpn, None)

    # ------------------------------------------------------------------
    # ABI bookkeeping

    def _enter(self, name: str) -> None:
        self.metrics.guardian_entries[name] = self.metrics.guardian_entries.get(name, 0) + 1

    def _spi_by_root(self, root: int) -> SensitiveProcessInfo | None:
        if root in self.sensitive:
            return self.sensitive[root]
        owner = self.cpgd_index.get(root)
        return self.sensitive.get(owner) if owner is not None else None

    def _queue_kill(self, pgd: int, reason: str) -> None:
        spi = self.sensitive.get(pgd)
        if spi is not None:
            spi.killed = True
        self.pending_kills.append((pgd, reason))
        self.metrics.processes_killed += 1
        self.log.write("guardian_kill", pgd=hex(pgd), reason=reason)

    def drain_kills(self) -> list[tuple[int, str]]:
        out, self.pending_kills = self.pending_kills, []
        return out

    # ------------------------------------------------------------------
    # ABI 1: vm-control trap

    def vmcr_trap(self, core: CpuCore, reg: str, value: int) -> bool:
        self._enter("vmcr_trap")
        if reg in ("sctlr_mmu", "ttbr1", "vbar"):
            # boot state is immutable from kernel mode
            self.metrics.denied_vmcr += 1
            self.log.write("vmcr_trap", reg=reg, value=hex(value), result="denied")
            return False
        if reg == "ttbr0":
            if value == 0:
                # parking a core off any user space is always safe
                self.machine._apply_vm(core, "ttbr0", 0)
                self.machine._apply_vm(core, "vbar", self.normal_vbar)
                return True
            info = self.roots.get(value)
            if info is None or info.kind == "kernel":
                self.metrics.denied_vmcr += 1
                self.log.write("vmcr_trap", reg=reg, value=hex(value), result="denied")
                return False
            spi = self._spi_by_root(value)
            if spi is not None and not spi.killed:
                # kernel only ever sees the encrypted view of a protected space
                self.machine._apply_vm(core, "ttbr0", spi.c_pgd)
                self.machine._apply_vm(core, "vbar", self.secure_vbar)
                self.log.write("vmcr_trap", reg=reg, value=hex(value), result="cloaked")
            else:
                self.machine._apply_vm(core, "ttbr0", value)
                self.machine._apply_vm(core, "vbar", self.normal_vbar)
                self.log.write("vmcr_trap", reg=reg, value=hex(value), result="applied")
            self._post_entry_audit()
            return True
        self.metrics.denied_vmcr += 1
        return False

    # ------------------------------------------------------------------
    # ABI 2: exception entry (secure vector slot)

    def exception_entry(self, core: CpuCore, kind: ExceptionKind) -> str:
        self._enter("exception")
        spi = self._spi_by_root(core.ttbr0)
        if spi is None:
            raise InvariantViolation("secure vector reached without a protected root")

        detail = core.esr[1] if core.esr else 0
        if (kind is ExceptionKind.PERMISSION_FAULT
                and core.ttbr0 == spi.pgd
                and (detail >> PAGE_SHIFT) in spi.double_mapped
                and spi.vma_perm(detail) == "rw"):
            self._coherence_write_fix(spi, detail >> PAGE_SHIFT)
            core.mode = Mode.USER
            core.pc = core.elr
            self._post_entry_audit()
            return "resumed"

        sp = core.sp
        if sp not in spi.threads:
            spi.threads[sp] = {"stack_base": sp, "dying": False}
        if sp in spi.saved:
            # a forged return faulted while the real context is still banked;
            # keep the original and re-arm the trapped return
            self._sanitize(core, None)
            core.elr = spi.resume_va
            core.ttbr0 = spi.c_pgd
            self.log.write("exception_entry", exc=kind.name, sp=hex(sp),
                           result="nested")
            self._post_entry_audit()
            return "continue"

        regs = list(core.regs)
        ctx = SavedContext(regs=regs, sp=sp, pc=core.elr, kind=kind)
        if kind is ExceptionKind.SYSCALL:
            ctx.syscall_id = core.reg(7)
            ctx.syscall_args = tuple(core.reg(i) for i in range(6))
            self._derive_capabilities(spi, core, ctx)
        spi.saved[sp] = ctx
        self.bank_trace.append({"pgd": spi.pgd, "sp": sp, "pc": ctx.pc,
                                "regs": tuple(regs), "kind": kind.name})
        self._sanitize(core, ctx)
        core.elr = spi.resume_va
        core.ttbr0 = spi.c_pgd
        self.log.write("exception_entry", exc=kind.name, sp=hex(sp),
                       result="suspended")
        self._post_entry_audit()
        return "continue"

    def _sanitize(self, core: CpuCore, ctx: SavedContext | None) -> None:
        keep = ()
        if ctx is not None and ctx.kind is ExceptionKind.SYSCALL:
            keep = (0, 1, 2, 3, 4, 5, 7)
        for i in range(8):
            if i not in keep:
                core.regs[i] = 0

    def _coherence_write_fix(self, spi: SensitiveProcessInfo, vpn: int) -> None:
        """Owner wrote a double-mapped page: drop the stale encrypted view."""
        slot = self._leaf_slot(spi.c_pgd, vpn)
        leaf = self.mem.read_u32(slot)
        frame = pte_frame(leaf)
        self.mem.write_u32(slot, 0)
        fi = self.frames[frame]
        fi.refcount -= 1
        fi.kind = FrameKind.PLAIN
        fi.owner = 0
        fi.vpn = 0
        self._linear_set_writable(frame, True)
        user_slot = self._leaf_slot(spi.pgd, vpn)
        self.mem.write_u32(user_slot, self.mem.read_u32(user_slot) | PTE_WRITABLE)
        spi.double_mapped.discard(vpn)
        suspended = self.kernel_hooks.suspend_cloak_reader(spi.pgd, vpn)
        if suspended:
            self.metrics.os_suspensions += 1
        self.log.write("coherence_fix", pgd=hex(spi.pgd), vpn=hex(vpn),
                       os_thread=suspended or "none")

    # ------------------------------------------------------------------
    # capability derivation at syscall suspension

    def _grant(self, spi: SensitiveProcessInfo, addr: int, size: int | None,
               rw: str, life: tuple[str, int], kind: str = "plain") -> None:
        cap = Capability(cap_id=spi.next_cap_id, addr=addr, size=size, rw=rw,
                         life=life, kind=kind)
        spi.next_cap_id += 1
        spi.caps.append(cap)
        self.metrics.capability_grants += 1

    def _derive_capabilities(self, spi: SensitiveProcessInfo, core: CpuCore,
                             ctx: SavedContext) -> None:
        sp = ctx.sp
        args = ctx.syscall_args
        sid = ctx.syscall_id
        eph = ("ephemeral", sp)
        base = spi.threads[sp]["stack_base"]
        long = ("long", base)
        if sid == SYS_READ:
            self._grant(spi, args[1], args[2], "w", eph)
        elif sid == SYS_WRITE:
            self._grant(spi, args[1], args[2], "r", eph)
        elif sid == SYS_OPEN:
            self._grant(spi, args[0], None, "r", eph, kind="path")
        elif sid == SYS_FUTEX:
            self._grant(spi, args[0], 4, "r", eph)
        elif sid == SYS_CLONE:
            if args[0] & CLONE_CHILD_CLEARTID:
                self._grant(spi, args[1], 4, "w", ("long", args[2]))
            # bank the child's initial context; the kernel resumes it through
            # the trampoline like any other suspension
            child = SavedContext(regs=list(ctx.regs), sp=args[2], pc=args[3],
                                 kind=None)
            child.regs[0] = 0
            spi.saved[args[2]] = child
            spi.threads[args[2]] = {"stack_base": args[2], "dying": False}
            self.bank_trace.append({"pgd": spi.pgd, "sp": args[2], "pc": args[3],
                                    "regs": tuple(child.regs), "kind": "clone"})
        elif sid == SYS_SET_ROBUST_LIST:
            self._grant(spi, args[0], 8, "r", long, kind="robust_list")
        elif sid == SYS_SET_TID_ADDRESS:
            self._grant(spi, args[0], 4, "w", long)
        elif sid == SYS_SIGACTION:
            spi.handlers[args[0]] = args[1]
        elif sid == SYS_SIGALTSTACK:
            spi.altstacks[sp] = (args[0], args[1])
            self._grant(spi, args[0], args[1], "w", long)
        elif sid == SYS_EXIT:
            spi.threads[sp]["dying"] = True

    def thread_reap(self, pgd: int, sp: int) -> None:
        """Kernel finished tearing a thread down: drop its grants and context."""
        spi = self.sensitive.get(pgd)
        if spi is None:
            return
        info = spi.threads.pop(sp, None)
        base = info["stack_base"] if info else sp
        spi.caps = [c for c in spi.caps
                    if c.life not in (("ephemeral", sp), ("long", base))]
        spi.saved.pop(sp, None)
        spi.signal_stack.pop(sp, None)
        spi.altstacks.pop(sp, None)

    # ------------------------------------------------------------------
    # ABI 3: process_start (SMC from the start trampoline)

    def smc(self, core: CpuCore, imm: int) -> None:
        if imm == SMC_PROCESS_START:
            self.process_start(core)
        elif imm == SMC_PROCESS_RESUME:
            self.process_resume(core)
        else:
            spi = self._spi_by_root(core.ttbr0)
            pgd = spi.pgd if spi else core.ttbr0
            self._queue_kill(pgd, f"unexpected monitor call imm={imm}")
            self.kernel_hooks.on_guardian_kill(pgd)
        if core.mode is Mode.MONITOR:
            core.mode = Mode.KERNEL     # failed entries fall back to the kernel

    def process_start(self, core: CpuCore) -> None:
        self._enter("process_start")
        pgd = core.ttbr0
        try:
            self._process_start_inner(core, pgd)
        except GuardianDenied as denied:
            self._queue_kill(pgd, denied.reason)
            self.kernel_hooks.on_guardian_kill(pgd)
        self._post_entry_audit()

    def _process_start_inner(self, core: CpuCore, pgd: int) -> None:
        if pgd in self.sensitive:
            raise GuardianDenied("process already started")
        info = self.roots.get(pgd)
        if info is None or info.kind != "pgd":
            raise GuardianDenied("start from an unregistered root")

        tramp_va = core.pc & ~(PAGE_SIZE - 1)
        ptr = self._read_pre_start(pgd, tramp_va + adapter.TRAMPOLINE_LEN, 8)
        if ptr is None:
            raise GuardianDenied("trampoline page lacks the metadata pointer")
        meta_va, meta_len = struct.unpack("<II", ptr)
        if meta_len > 16 * PAGE_SIZE:
            raise GuardianDenied("metadata pointer is implausible")
        blob = self._read_pre_start(pgd, meta_va, meta_len)
        if blob is None:
            raise GuardianDenied("metadata pages are not mapped")
        try:
            meta = adapter.parse_metadata(blob)
            sealing.verify_metadata(meta.dev_pub, meta.signed_payload(),
                                    meta.signature)
        except (adapter.AdapterError, sealing.BadMetadataSignature) as exc:
            raise GuardianDenied(f"metadata rejected: {exc}") from None
        k_enc, k_mac = sealing.unwrap_keys(meta.wrapped_keys, self.guardian_priv)

        headers = meta.headers
        tramp_hdr = [h for h in headers if h[0] == int(imagefmt.SegType.TRAMPOLINE)]
        sigarea_hdr = [h for h in headers if h[0] == int(imagefmt.SegType.SIGAREA)]
        signature_hdr = [h for h in headers if h[0] == int(imagefmt.SegType.SIGNATURE)]
        if len(tramp_hdr) != 1 or len(sigarea_hdr) != 1 or len(signature_hdr) != 1:
            raise GuardianDenied("metadata header copy is malformed")
        if tramp_hdr[0][2] != tramp_va:
            raise GuardianDenied("started from a page the headers do not bless")

        vmas = []
        load_vpns: set[int] = set()
        for t, flags, vaddr, filesz, memsz in headers:
            end = vaddr + ((memsz + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1))
            perm = "rw" if flags & int(imagefmt.SegFlags.W) else "ro"
            vmas.append((vaddr, end, perm))
            if t == int(imagefmt.SegType.LOAD):
                for vpn in range((vaddr) >> PAGE_SHIFT,
                                 (vaddr + filesz + PAGE_SIZE - 1) >> PAGE_SHIFT):
                    load_vpns.add(vpn)
        stack = self.kernel_hooks.process_layout(pgd)
        if stack is not None:
            lo, hi = stack
            if lo % PAGE_SIZE or hi % PAGE_SIZE or not lo < hi <= KERNEL_BASE:
                raise GuardianDenied("declared stack region is malformed")
            for vaddr, end, _ in vmas:
                if lo < end and vaddr < hi:
                    raise GuardianDenied("declared stack overlaps the image")
            vmas.append((lo, hi, "rw"))

        spi = SensitiveProcessInfo(
            pgd=pgd, keys=(k_enc, k_mac), vmas=vmas,
            trampoline_vpn=tramp_va >> PAGE_SHIFT,
            resume_va=tramp_va + adapter.RESUME_OFFSET,
            original_entry=meta.original_entry,
            sigarea_base=sigarea_hdr[0][2],
            load_vpns=load_vpns)
        spi.pinned_vpns = set(spi.sigarea_vpns()) | {spi.trampoline_vpn}

        sig_blob = self._read_pre_start(pgd, signature_hdr[0][2], signature_hdr[0][3])
        if sig_blob is None:
            raise GuardianDenied("signature pages are not mapped")
        try:
            tags = adapter.parse_signature_segment(sig_blob)
        except adapter.AdapterError as exc:
            raise GuardianDenied(f"signature segment rejected: {exc}") from None

        # validate every present page first; no frame is written until the
        # whole image has passed, so a rejected start leaves only ciphertext
        present = self._present_leaves(pgd)
        plaintexts: dict[int, bytes] = {}
        for vpn, leaf in present.items():
            va = vpn << PAGE_SHIFT
            perm = spi.vma_perm(va)
            if perm is None:
                raise GuardianDenied(f"stray mapping at vpn 0x{vpn:x}")
            if bool(leaf & PTE_WRITABLE) != (perm == "rw"):
                raise GuardianDenied(f"mapping width mismatch at vpn 0x{vpn:x}")
            if vpn in load_vpns:
                tag = tags.get(vpn)
                if tag is None:
                    raise GuardianDenied(f"no tag for load page 0x{vpn:x}")
                ct = self.mem.frame_bytes(pte_frame(leaf))
                try:
                    plaintexts[vpn] = sealing.unseal_page(k_enc, k_mac, vpn, 0,
                                                          ct, tag)
                except sealing.TagMismatch:
                    raise GuardianDenied(
                        f"load page 0x{vpn:x} failed verification") from None
                self.metrics.unseal_ops += 1

        for vpn, leaf in present.items():
            frame = pte_frame(leaf)
            pt = plaintexts.get(vpn)
            if pt is not None:
                self.mem.write(frame * PAGE_SIZE, pt)
                spi.versions[vpn] = 0
                self._sigarea_store(spi, vpn, 0, tags[vpn])
            fi = self.frames[frame]
            fi.kind = FrameKind.SENSITIVE_USER
            fi.owner = pgd
            fi.vpn = vpn
            self._hide_from_linear(frame)
            spi.ever_mapped.add(vpn)

        self.sensitive[pgd] = spi
        self.log.write("process_start", pgd=hex(pgd),
                       present=len(present), loads=len(load_vpns),
                       entry=hex(meta.original_entry))

        # make the kernel build the cloak tree now, so the trapped return
        # always has something to fetch through
        self.kernel_hooks.set_cpgd_magic(pgd, CPGD_MAGIC)
        self.kernel_hooks.os_page_fault(pgd, tramp_va)
        if spi.c_pgd in (0, CPGD_MAGIC):
            self._queue_kill(pgd, "kernel failed to provide a cloak root")
            self.kernel_hooks.on_guardian_kill(pgd)
            return

        self.machine._apply_vm(core, "vbar", self.secure_vbar)
        core.mode = Mode.USER
        core.pc = meta.original_entry

    def _read_pre_start(self, pgd: int, va: int, length: int) -> bytes | None:
        """Read through a not-yet-protected root during start-up validation."""
        out = bytearray()
        while length > 0:
            leaf = self._leaf(pgd, va >> PAGE_SHIFT)
            if not leaf & PTE_PRESENT:
                return None
            chunk = min(length, PAGE_SIZE - (va & (PAGE_SIZE - 1)))
            out += self.mem.read(pte_frame(leaf) * PAGE_SIZE + (va & (PAGE_SIZE - 1)),
                                 chunk)
            va += chunk
            length -= chunk
        return bytes(out)

    def _present_leaves(self, root: int) -> dict[int, int]:
        present = {}
        words = self.mem.frame_words(root >> PAGE_SHIFT)
        for l1_idx, l1 in enumerate(words):
            if not l1 & PTE_PRESENT:
                continue
            table = self.mem.frame_words(pte_frame(l1))
            for l2_idx, leaf in enumerate(table):
                if leaf & PTE_PRESENT:
                    present[(l1_idx << 10) | l2_idx] = leaf
        return present

    # ------------------------------------------------------------------
    # ABI 4: process_resume (SMC from the resume trampoline)

    def process_resume(self, core: CpuCore) -> None:
        self._enter("process_resume")
        spi = self._spi_by_root(core.ttbr0)
        if spi is None:
            self._queue_kill(core.ttbr0, "resume without a protected root")
            self.kernel_hooks.on_guardian_kill(core.ttbr0)
            return
        ctx = spi.saved.pop(core.sp, None)
        if ctx is None:
            self._queue_kill(spi.pgd, "resume with no banked context")
            self.kernel_hooks.on_guardian_kill(spi.pgd)
            return

        kernel_ret = core.reg(0)
        if ctx.kind is ExceptionKind.SYSCALL:
            ok = self._vet_syscall_return(spi, ctx, kernel_ret)
            if not ok:
                self.kernel_hooks.on_guardian_kill(spi.pgd)
                return

        if ctx.kind is ExceptionKind.SYSCALL and ctx.syscall_id == SYS_SIGRETURN:
            stack = spi.signal_stack.get(ctx.sp) or []
            if not stack:
                self._queue_kill(spi.pgd, "sigreturn with no pending frame")
                self.kernel_hooks.on_guardian_kill(spi.pgd)
                return
            ctx = stack.pop()
            kernel_ret = ctx.regs[0]

        pending = self.kernel_hooks.take_pending_signal(spi.pgd, ctx.sp)
        if pending is not None:
            redirected = self._redirect_to_handler(spi, core, ctx, kernel_ret, pending)
            if redirected:
                self._drop_ephemeral(spi, ctx.sp)
                self._post_entry_audit()
                return

        for i in range(8):
            core.regs[i] = ctx.regs[i]
        if ctx.kind is ExceptionKind.SYSCALL and ctx.syscall_id != SYS_SIGRETURN:
            core.regs[0] = kernel_ret
        core.sp = ctx.sp
        core.pc = ctx.pc
        core.ttbr0 = spi.pgd
        core.mode = Mode.USER
        self.resume_trace.append({"pgd": spi.pgd, "sp": core.sp, "pc": core.pc,
                                  "regs": tuple(core.regs),
                                  "kind": ctx.kind.name if ctx.kind else "clone",
                                  "ret_merged": ctx.kind is ExceptionKind.SYSCALL
                                  and ctx.syscall_id != SYS_SIGRETURN})
        self._drop_ephemeral(spi, ctx.sp)
        self.log.write("process_resume", pgd=hex(spi.pgd), sp=hex(ctx.sp),
                       pc=hex(ctx.pc))
        self._post_entry_audit()

    def _drop_ephemeral(self, spi: SensitiveProcessInfo, sp: int) -> None:
        spi.caps = [c for c in spi.caps if c.life != ("ephemeral", sp)]

    def _redirect_to_handler(self, spi: SensitiveProcessInfo, core: CpuCore,
                             ctx: SavedContext, kernel_ret: int,
                             pending: tuple[int, int, int]) -> bool:
        signum, handler, frame_sp = pending
        registered = spi.handlers.get(signum)
        alt = spi.altstacks.get(ctx.sp)
        if registered is None or registered != handler or alt is None:
            self._queue_kill(spi.pgd, "signal redirect outside the registered handler")
            return False
        base, size = alt
        if not (base <= frame_sp < base + size):
            self._queue_kill(spi.pgd, "signal frame outside the registered stack")
            return False
        # bank the interrupted context (with the syscall result merged) and
        # run the handler; sigreturn unbanks it
        resumed = SavedContext(regs=list(ctx.regs), sp=ctx.sp, pc=ctx.pc,
                               kind=ctx.kind, syscall_id=ctx.syscall_id,
                               syscall_args=ctx.syscall_args)
        if ctx.kind is ExceptionKind.SYSCALL and ctx.syscall_id != SYS_SIGRETURN:
            resumed.regs[0] = kernel_ret
        # keyed by the handler frame: sigreturn arrives banked under that sp
        spi.signal_stack.setdefault(frame_sp, []).append(resumed)
        for i in range(8):
            core.regs[i] = 0
        core.regs[0] = signum
        core.sp = frame_sp
        core.pc = handler
        core.ttbr0 = spi.pgd
        core.mode = Mode.USER
        self.log.write("signal_redirect", pgd=hex(spi.pgd), signum=signum,
                       handler=hex(handler))
        return True

    # ------------------------------------------------------------------
    # Iago vetting for address-shaping syscalls

    def _vet_syscall_return(self, spi: SensitiveProcessInfo, ctx: SavedContext,
                            ret: int) -> bool:
        sid = ctx.syscall_id
        if sid == SYS_MMAP:
            if ret & 0x8000_0000:       # error return passes through
                return True
            length = (ctx.syscall_args[1] + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)
            if ret % PAGE_SIZE or length == 0 or ret + length > KERNEL_BASE:
                self._queue_kill(spi.pgd, "mmap returned a malformed region")
                return False
            for start, end, _ in spi.vmas:
                if start < ret + length and ret < end:
                    self._queue_kill(spi.pgd, "mmap returned an overlapping region")
                    return False
            perm = "rw" if ctx.syscall_args[2] & 0x2 else "ro"
            spi.vmas.append((ret, ret + length, perm))
        elif sid == SYS_BRK:
            if ret & 0x8000_0000:
                return True
            heap = self.kernel_hooks.heap_region(spi.pgd)
            if heap is None:
                return True
            lo, _old_hi = heap
            if ret < lo or ret % PAGE_SIZE or ret > KERNEL_BASE:
                self._queue_kill(spi.pgd, "brk returned a malformed break")
                return False
            for start, end, _ in spi.vmas:
                if (start, end) == heap:
                    continue
                if start < ret and lo < end:
                    self._queue_kill(spi.pgd, "brk walked into another region")
                    return False
            spi.vmas = [v for v in spi.vmas if (v[0], v[1]) != heap]
            if ret > lo:
                spi.vmas.append((lo, ret, "rw"))
        elif sid == SYS_MUNMAP:
            if ret & 0x8000_0000:
                return True
            addr = ctx.syscall_args[0]
            length = (ctx.syscall_args[1] + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)
            kept = []
            for start, end, perm in spi.vmas:
                if start >= addr + length or end <= addr:
                    kept.append((start, end, perm))
                    continue
                if start < addr:
                    kept.append((start, addr, perm))
                if end > addr + length:
                    kept.append((addr + length, end, perm))
            spi.vmas = kept
            for vpn in range(addr >> PAGE_SHIFT, (addr + length) >> PAGE_SHIFT):
                self._sigarea_clear(spi, vpn)
                spi.ever_mapped.discard(vpn)
        return True

    # ------------------------------------------------------------------
    # ABI 5: set_pts: validate and apply a batch of PT updates

    def set_pts(self, batch: list[PteUpdate]) -> list[str]:
        self._enter("set_pts")
        if len(batch) == 0 or len(batch) > BATCH_LIMIT:
            raise GuardianDenied(f"batch size {len(batch)} outside 1..{BATCH_LIMIT}")
        # two passes: validate everything against current + planned state,
        # then apply; a rejection anywhere fails the whole batch
        planned: dict = {"tables": {}, "frames": {}, "binds": {}}
        checks = [self._validate_update(u, planned) for u in batch]
        results = [self._apply_update(u, c) for u, c in zip(batch, checks)]
        self.log.write("set_pts", n=len(batch),
                       results=",".join(results))
        self._post_entry_audit()
        return results

    def _validate_update(self, u: PteUpdate, planned: dict) -> dict:
        check: dict = {}
        root_info = self.roots.get(u.root)
        bind_new_root = False
        if root_info is None:
            if u.root in planned["binds"]:
                root_info = planned["binds"][u.root]
            elif u.cloak_of is not None:
                spi = self.sensitive.get(u.cloak_of)
                if spi is None:
                    raise GuardianDenied("cloak bind for an unknown process")
                if spi.c_pgd not in (0, CPGD_MAGIC):
                    raise GuardianDenied("process already has a cloak root")
                self._require_convertible(u.root >> PAGE_SHIFT, planned)
                root_info = RootInfo(kind="cpgd", owner=u.cloak_of)
                planned["binds"][u.root] = root_info
                planned["frames"][u.root >> PAGE_SHIFT] = FrameKind.PAGE_TABLE
                bind_new_root = True
            else:
                self._require_convertible(u.root >> PAGE_SHIFT, planned)
                root_info = RootInfo(kind="pgd")
                planned["binds"][u.root] = root_info
                planned["frames"][u.root >> PAGE_SHIFT] = FrameKind.PAGE_TABLE
                bind_new_root = True
        elif root_info.kind == "kernel":
            raise GuardianDenied("kernel half is fixed at boot")
        check["bind_new_root"] = bind_new_root
        check["root_info"] = root_info

        if u.vpn >= (KERNEL_BASE >> PAGE_SHIFT):
            raise GuardianDenied("update targets the kernel half")

        # level-1 slot: may need a kernel-donated table frame
        l1_key = (u.root, u.vpn >> 10)
        have_table = (not bind_new_root and
                      self._leaf_slot(u.root, u.vpn) is not None) or \
                     l1_key in planned["tables"]
        if not have_table:
            if u.entry == 0:
                check["skip"] = True      # unmapping under a missing table: no-op
                return check
            if u.table_frame is None:
                raise GuardianDenied(f"no table for vpn 0x{u.vpn:x} and no donation")
            self._require_convertible(u.table_frame, planned)
            planned["tables"][l1_key] = u.table_frame
            planned["frames"][u.table_frame] = FrameKind.PAGE_TABLE
            check["install_table"] = u.table_frame

        if u.entry == 0:
            unmap_spi = self._spi_by_root(u.root)
            if unmap_spi is not None and u.vpn in unmap_spi.pinned_vpns:
                raise GuardianDenied("pinned page may not be unmapped")
            return check

        frame = pte_frame(u.entry)
        if frame >= self.mem.frame_count:
            raise GuardianDenied("entry points past physical memory")
        kind = planned["frames"].get(frame, self.frames[frame].kind)
        owner_spi = self._spi_by_root(u.root)

        if kind is FrameKind.GUARDIAN:
            raise GuardianDenied("attempt to map a monitor frame")
        if kind in (FrameKind.PAGE_TABLE, FrameKind.IVT):
            if u.entry & PTE_WRITABLE:
                raise GuardianDenied("writable mapping of a table/vector frame")
            return check    # read-only aliasing of tables is harmless
        if kind is FrameKind.SENSITIVE_USER:
            fi = self.frames[frame]
            alias_ok = (owner_spi is not None
                        and root_info.kind == "cpgd"
                        and root_info.owner == fi.owner
                        and u.vpn == self.sensitive[fi.owner].trampoline_vpn
                        and fi.vpn == u.vpn
                        and not u.entry & PTE_WRITABLE)
            if not alias_ok:
                raise GuardianDenied("protected frame may not be re-mapped")
            check["alias"] = True
            return check
        if kind is FrameKind.CLOAK_CIPHERTEXT:
            raise GuardianDenied("encrypted-view frame may not be re-mapped")

        if root_info.kind == "pgd" and owner_spi is not None:
            va = u.vpn << PAGE_SHIFT
            perm = owner_spi.vma_perm(va)
            if perm is None:
                raise GuardianDenied(f"vpn 0x{u.vpn:x} is outside every region")
            if (u.entry & PTE_WRITABLE) and perm != "rw":
                raise GuardianDenied("writable mapping of a read-only region")
            if u.vpn in owner_spi.pinned_vpns and self._leaf(u.root, u.vpn):
                raise GuardianDenied("pinned page may not be remapped")
            looked = self._sigarea_lookup(owner_spi, u.vpn)
            if looked is not None:
                version, tag = looked
                ct = self.mem.frame_bytes(frame)
                k_enc, k_mac = owner_spi.keys
                try:
                    plain = sealing.unseal_page(k_enc, k_mac, u.vpn, version, ct, tag)
                except sealing.TagMismatch:
                    raise GuardianDenied(
                        f"sealed page 0x{u.vpn:x} failed verification",
                        fatal_pgd=owner_spi.pgd) from None
                check["unseal_plain"] = plain
            elif u.vpn in owner_spi.ever_mapped and not self._leaf(u.root, u.vpn) & PTE_PRESENT:
                raise GuardianDenied(
                    f"vpn 0x{u.vpn:x} content was dropped without sealing",
                    fatal_pgd=owner_spi.pgd)
            check["to_sensitive"] = owner_spi
        elif root_info.kind == "cpgd":
            owner = self.sensitive[root_info.owner if root_info.owner else u.cloak_of]
            if u.vpn in owner.sigarea_vpns():
                raise GuardianDenied("tag area never enters the encrypted view")
            if u.vpn == owner.trampoline_vpn:
                check["alias_tramp"] = owner
                return check
            if u.entry & PTE_WRITABLE:
                raise GuardianDenied("encrypted view is read-only")
            user_leaf = self._leaf(owner.pgd, u.vpn)
            if not user_leaf & PTE_PRESENT:
                raise GuardianDenied("nothing to seal at that vpn")
            self._require_convertible(frame, planned)
            planned["frames"][frame] = FrameKind.CLOAK_CIPHERTEXT
            check["seal_into"] = owner
        return check

    def _require_convertible(self, frame: int, planned: dict) -> None:
        kind = planned["frames"].get(frame, self.frames[frame].kind)
        if kind not in (FrameKind.FREE, FrameKind.PLAIN):
            raise GuardianDenied(f"frame {frame} is not kernel-donatable")
        if self.frames[frame].refcount > 1:
            raise GuardianDenied(f"frame {frame} is still multiply referenced")

    def _apply_update(self, u: PteUpdate, check: dict) -> str:
        if check.get("skip"):
            return "noop"
        if check.get("bind_new_root"):
            root_frame = u.root >> PAGE_SHIFT
            self.mem.zero_frame(root_frame)
            fi = self.frames[root_frame]
            fi.kind = FrameKind.PAGE_TABLE
            self._linear_set_writable(root_frame, False)
            info = check["root_info"]
            self.roots[u.root] = info
            if info.kind == "cpgd":
                spi = self.sensitive[info.owner]
                spi.c_pgd = u.root
                self.cpgd_index[u.root] = info.owner
                self.kernel_hooks.set_cpgd_magic(info.owner, u.root)
        root_info = self.roots[u.root]

        table = check.get("install_table")
        if table is not None:
            self.mem.zero_frame(table)
            fi = self.frames[table]
            fi.kind = FrameKind.PAGE_TABLE
            self._linear_set_writable(table, False)
            self.mem.write_u32(u.root + (u.vpn >> 10) * 4, pte_pack(table))
            self.frames[table].refcount += 1
            root_info.tables.add(table)

        slot = self._leaf_slot(u.root, u.vpn)
        old = self.mem.read_u32(slot)
        if old & PTE_PRESENT:
            self._release_leaf(u.root, u.vpn, old)

        if u.entry == 0:
            self.mem.write_u32(slot, 0)
            return "unmapped"

        frame = pte_frame(u.entry)
        entry = u.entry
        spi = check.get("to_sensitive")
        if check.get("alias") or check.get("alias_tramp") is not None:
            owner = check.get("alias_tramp") or self._spi_by_root(u.root)
            tramp_frame = pte_frame(self._leaf(owner.pgd, owner.trampoline_vpn))
            entry = pte_pack(tramp_frame, writable=False, user=True)
            self.mem.write_u32(slot, entry)
            self.frames[tramp_frame].refcount += 1
            return "alias"
        if spi is not None:
            plain = check.get("unseal_plain")
            if plain is not None:
                self.mem.write(frame * PAGE_SIZE, plain)
                self.metrics.unseal_ops += 1
            elif u.vpn not in spi.ever_mapped:
                self.mem.zero_frame(frame)       # fresh anon content is always zero
            fi = self.frames[frame]
            fi.kind = FrameKind.SENSITIVE_USER
            fi.owner = spi.pgd
            fi.vpn = u.vpn
            self._hide_from_linear(frame)
            spi.ever_mapped.add(u.vpn)
            if spi.c_pgd not in (0, CPGD_MAGIC):
                if self._leaf(spi.c_pgd, u.vpn) & PTE_PRESENT:
                    entry &= ~PTE_WRITABLE       # keep the coherence arm
            self.mem.write_u32(slot, entry)
            self.frames[frame].refcount += 1
            return "unsealed" if plain is not None else "mapped"
        sealed = check.get("seal_into")
        if sealed is not None:
            self._seal_into(sealed, u.vpn, frame)
            entry = pte_pack(frame, writable=False, user=False)
            self.mem.write_u32(slot, entry)
            self.frames[frame].refcount += 1
            sealed.double_mapped.add(u.vpn)
            return "sealed"
        self.mem.write_u32(slot, entry)
        fi = self.frames[frame]
        if fi.kind is FrameKind.FREE:
            fi.kind = FrameKind.PLAIN
        fi.refcount += 1
        return "mapped"

    def _seal_into(self, spi: SensitiveProcessInfo, vpn: int, cloak_frame: int) -> None:
        user_leaf = self._leaf(spi.pgd, vpn)
        user_frame = pte_frame(user_leaf)
        version = spi.versions.get(vpn, 0) + 1
        spi.versions[vpn] = version
        k_enc, k_mac = spi.keys
        ct, tag = sealing.seal_page(k_enc, k_mac, vpn, version,
                                    self.mem.frame_bytes(user_frame))
        self.metrics.seal_ops += 1
        self.mem.write(cloak_frame * PAGE_SIZE, ct)
        self._sigarea_store(spi, vpn, version, tag)
        fi = self.frames[cloak_frame]
        fi.kind = FrameKind.CLOAK_CIPHERTEXT
        fi.owner = spi.pgd
        fi.vpn = vpn
        self._linear_set_writable(cloak_frame, False)
        # arm coherence: the owner's view goes read-only until it writes
        user_slot = self._leaf_slot(spi.pgd, vpn)
        self.mem.write_u32(user_slot, user_leaf & ~PTE_WRITABLE)

    def _release_leaf(self, root: int, vpn: int, old: int) -> None:
        frame = pte_frame(old)
        fi = self.frames[frame]
        fi.refcount -= 1
        root_info = self.roots[root]
        spi = self._spi_by_root(root)
        if fi.kind is FrameKind.SENSITIVE_USER and root_info.kind == "pgd":
            if fi.refcount == 0:
                self.mem.zero_frame(frame)       # cleartext never outlives the mapping
                fi.kind = FrameKind.PLAIN
                fi.owner = 0
                fi.vpn = 0
                self._restore_linear(frame)
            if spi is not None and spi.c_pgd not in (0, CPGD_MAGIC):
                # dropping the user page orphans the encrypted copy
                cslot = self._leaf_slot(spi.c_pgd, vpn)
                if cslot is not None and vpn != spi.trampoline_vpn:
                    cold = self.mem.read_u32(cslot)
                    if cold & PTE_PRESENT:
                        self.mem.write_u32(cslot, 0)
                        self.frames[pte_frame(cold)].refcount -= 1
                        self._release_cloak(pte_frame(cold))
                        spi.double_mapped.discard(vpn)
        elif fi.kind is FrameKind.CLOAK_CIPHERTEXT and root_info.kind == "cpgd":
            self._release_cloak(frame)
            if spi is not None:
                spi.double_mapped.discard(vpn)
                user_slot = self._leaf_slot(spi.pgd, vpn)
                if user_slot is not None:
                    user_leaf = self.mem.read_u32(user_slot)
                    if user_leaf & PTE_PRESENT and spi.vma_perm(vpn << PAGE_SHIFT) == "rw":
                        self.mem.write_u32(user_slot, user_leaf | PTE_WRITABLE)
        elif fi.kind is FrameKind.SENSITIVE_USER and root_info.kind == "cpgd":
            pass    # trampoline alias released; nothing to scrub

    def _release_cloak(self, frame: int) -> None:
        fi = self.frames[frame]
        fi.kind = FrameKind.PLAIN
        fi.owner = 0
        fi.vpn = 0
        self._linear_set_writable(frame, True)

    # ------------------------------------------------------------------
    # ABI 6: free_pgd

    def free_pgd(self, pgd: int) -> None:
        self._enter("free_pgd")
        info = self.roots.get(pgd)
        if info is None or info.kind != "pgd":
            raise GuardianDenied("free of an unknown root")
        spi = self.sensitive.get(pgd)
        cpgd = spi.c_pgd if spi else 0
        live = {pgd}
        if cpgd not in (0, CPGD_MAGIC):
            live.add(cpgd)
        for core in self.machine.cores:
            if core.ttbr0 in live:
                raise GuardianDenied("root is still live on a core")

        trees = [pgd] + ([cpgd] if cpgd not in (0, CPGD_MAGIC) else [])
        for root in trees:
            for vpn, leaf in self._present_leaves(root).items():
                self._release_leaf(root, vpn, leaf)
                slot = self._leaf_slot(root, vpn)
                self.mem.write_u32(slot, 0)
        # belt and braces: scrub anything still attributed to this owner
        for frame, fi in enumerate(self.frames):
            if fi.owner == pgd and fi.kind in (FrameKind.SENSITIVE_USER,
                                               FrameKind.CLOAK_CIPHERTEXT):
                self.mem.zero_frame(frame)
                if fi.kind is FrameKind.SENSITIVE_USER:
                    self._restore_linear(frame)
                else:
                    self._linear_set_writable(frame, True)
                fi.kind = FrameKind.FREE
                fi.owner = 0
                fi.vpn = 0
        for root in trees:
            root_info = self.roots.pop(root)
            for table in root_info.tables:
                root_words = self.mem.frame_words(root >> PAGE_SHIFT)
                for idx, word in enumerate(root_words):
                    if word & PTE_PRESENT and pte_frame(word) == table:
                        self.mem.write_u32(root + idx * 4, 0)
                        self.frames[table].refcount -= 1
                self.mem.zero_frame(table)
                self.frames[table].kind = FrameKind.FREE
                self._linear_set_writable(table, True)
            self.mem.zero_frame(root >> PAGE_SHIFT)
            self.frames[root >> PAGE_SHIFT].kind = FrameKind.FREE
            self._linear_set_writable(root >> PAGE_SHIFT, True)
        self.cpgd_index.pop(cpgd, None)
        self.sensitive.pop(pgd, None)
        self.log.write("free_pgd", pgd=hex(pgd))
        self._post_entry_audit()

    # ------------------------------------------------------------------
    # ABI 7: memory_move, the only cleartext path between kernel and process

    def memory_move(self, direction: str, pgd: int, user_va: int,
                    kernel_va: int, length: int, op: str = "copy") -> MoveResult:
        self._enter("memory_move")
        spi = self.sensitive.get(pgd)
        if spi is None or spi.killed:
            self.metrics.denied_moves += 1
            return MoveResult("denied", reason="not a protected process")
        if op == "walk_list":
            return self._robust_walk(spi, user_va)
        need = "r" if direction == "to_kernel" else "w"
        cap = self._find_capability(spi, user_va, length, need)
        if cap is None:
            self.metrics.denied_moves += 1
            self.log.write("memory_move", dir=direction, va=hex(user_va),
                           len=length, result="denied")
            return MoveResult("denied", reason="no covering capability")
        if cap.kind == "path":
            # string grants clamp instead of failing: the kernel cannot know
            # the length before it asks
            length = min(length, cap.addr + cap.size - user_va)
        if length > 0:
            fault = self._first_unmapped(spi, user_va, length)
            if fault is not None:
                self.log.write("memory_move", dir=direction, va=hex(user_va),
                               len=length, result="need_page")
                return MoveResult("need_page", fault_va=fault)
        if not self._kernel_range_ok(kernel_va, length):
            self.metrics.denied_moves += 1
            return MoveResult("denied", reason="kernel window is not plain memory")
        if direction == "to_kernel":
            data = self._user_read(spi, user_va, length)
            self.mem.write(kernel_va - KERNEL_BASE, data)
        else:
            data = self.mem.read(kernel_va - KERNEL_BASE, length)
            wrote = self._user_write(spi, user_va, data)
            if not wrote:
                return MoveResult("need_page", fault_va=user_va)
            self._cloak_stale_fix(spi, user_va, length)
        self.metrics.move_copies += 1
        self.metrics.move_bytes += length
        self.move_log.append((pgd, user_va, length, need, cap.cap_id))
        self.log.write("memory_move", dir=direction, va=hex(user_va),
                       len=length, result="ok")
        self._post_entry_audit()
        return MoveResult("ok", moved=length)

    def _cloak_stale_fix(self, spi: SensitiveProcessInfo, va: int, length: int) -> None:
        """A mediated write dirtied user pages: drop stale encrypted copies."""
        for vpn in range(va >> PAGE_SHIFT, (va + max(length, 1) - 1 >> PAGE_SHIFT) + 1):
            if vpn in spi.double_mapped:
                self._coherence_write_fix(spi, vpn)

    def _find_capability(self, spi: SensitiveProcessInfo, va: int, length: int,
                         need: str) -> Capability | None:
        for cap in spi.caps:
            if cap.rw != need:
                continue
            if cap.kind == "path":
                if cap.size is None:
                    resolved = self._resolve_string(spi, cap.addr)
                    if resolved is None:
                        continue
                    cap.size = resolved
                if cap.addr <= va < cap.addr + cap.size:
                    return cap
                continue
            if cap.covers(va, length):
                return cap
        return None

    def _resolve_string(self, spi: SensitiveProcessInfo, va: int) -> int | None:
        for i in range(PATH_MAX):
            b = self._user_read(spi, va + i, 1)
            if b is None:
                return None
            if b == b"\x00":
                return i + 1
        return None

    def _first_unmapped(self, spi: SensitiveProcessInfo, va: int, length: int) -> int | None:
        end = va + length
        probe = va
        while probe < end:
            if self._user_walk_pa(spi, probe) is None:
                return probe
            probe = (probe & ~(PAGE_SIZE - 1)) + PAGE_SIZE
        return None

    def _kernel_range_ok(self, kernel_va: int, length: int) -> bool:
        if kernel_va < KERNEL_BASE:
            return False
        pa = kernel_va - KERNEL_BASE
        if pa + length > self.mem.size:
            return False
        for frame in range(pa >> PAGE_SHIFT, (pa + max(length, 1) - 1 >> PAGE_SHIFT) + 1):
            if self.frames[frame].kind not in (FrameKind.PLAIN, FrameKind.FREE):
                return False
        return True

    def _robust_walk(self, spi: SensitiveProcessInfo, head_va: int) -> MoveResult:
        cap = next((c for c in spi.caps
                    if c.kind == "robust_list" and c.addr == head_va), None)
        if cap is None:
            self.metrics.denied_moves += 1
            return MoveResult("denied", reason="no robust-list grant")
        nodes = []
        seen = set()
        va = head_va
        for _ in range(ROBUST_WALK_LIMIT):
            if va == 0 or va in seen:
                break
            seen.add(va)
            raw = self._user_read(spi, va, 8)
            if raw is None:
                break
            futex_va, nxt = struct.unpack("<II", raw)
            nodes.append((va, futex_va))
            self.metrics.robust_nodes_read += 1
            va = nxt
        self.log.write("robust_walk", head=hex(head_va), nodes=len(nodes))
        self._post_entry_audit()
        return MoveResult("nodes", nodes=nodes)

    # ------------------------------------------------------------------
    # invariant audit

    def _post_entry_audit(self) -> None:
        if self.audit_every_entry:
            self.audit()

    def walk_all_refs(self) -> dict[int, list[tuple[int, int, bool]]]:
        """Brute-force PTE census over every tracked root: frame -> refs."""
        refs: dict[int, list[tuple[int, int, bool]]] = {}
        for root in self.roots:
            words = self.mem.frame_words(root >> PAGE_SHIFT)
            for l1_idx, l1 in enumerate(words):
                if not l1 & PTE_PRESENT:
                    continue
                refs.setdefault(pte_frame(l1), []).append(
                    (root, l1_idx << 10, bool(l1 & PTE_WRITABLE)))
                for l2_idx, leaf in enumerate(self.mem.frame_words(pte_frame(l1))):
                    if leaf & PTE_PRESENT:
                        refs.setdefault(pte_frame(leaf), []).append(
                            (root, (l1_idx << 10) | l2_idx,
                             bool(leaf & PTE_WRITABLE)))
        return refs

    def audit(self) -> None:
        """I-checks over the whole machine; raises InvariantViolation."""
        for core in self.machine.cores:           # I0
            if not core.sctlr_mmu or not core.trap_vm:
                raise InvariantViolation(f"core {core.core_id} lost boot protections")
        refs = self.walk_all_refs()
        counted = {f: len(r) for f, r in refs.items()}
        for frame, fi in enumerate(self.frames):
            got = counted.get(frame, 0)
            if fi.kind is FrameKind.GUARDIAN and got:
                raise InvariantViolation(f"I1: monitor frame {frame} is mapped")
            if fi.kind in (FrameKind.PAGE_TABLE, FrameKind.IVT):
                if any(w for _, _, w in refs.get(frame, [])):
                    raise InvariantViolation(f"I2: table frame {frame} writable")
            if fi.refcount != got:                # I4
                raise InvariantViolation(
                    f"I4: frame {frame} refcount {fi.refcount} != census {got}")
            if fi.kind is FrameKind.SENSITIVE_USER:
                self._audit_sensitive_frame(frame, fi, refs.get(frame, []))
        self._audit_coherence()
        self._audit_moves()

    def _audit_sensitive_frame(self, frame: int, fi: FrameInfo,
                               refs: list[tuple[int, int, bool]]) -> None:
        spi = self.sensitive.get(fi.owner)
        if spi is None:
            raise InvariantViolation(f"I3: orphan protected frame {frame}")
        allowed = {(spi.pgd, fi.vpn)}
        if fi.vpn == spi.trampoline_vpn and spi.c_pgd not in (0, CPGD_MAGIC):
            allowed.add((spi.c_pgd, fi.vpn))
        actual = {(root, vpn) for root, vpn, _ in refs}
        if not actual or not actual <= allowed or (spi.pgd, fi.vpn) not in actual:
            raise InvariantViolation(
                f"I3: protected frame {frame} mapped at {sorted(actual)}")

    def _audit_coherence(self) -> None:
        for spi in self.sensitive.values():       # I5
            if spi.c_pgd in (0, CPGD_MAGIC):
                continue
            for vpn in sorted(spi.double_mapped):
                user = self._leaf(spi.pgd, vpn)
                cloak = self._leaf(spi.c_pgd, vpn)
                if not (user & PTE_PRESENT and cloak & PTE_PRESENT):
                    raise InvariantViolation(f"I5: half-present double map 0x{vpn:x}")
                if user & PTE_WRITABLE:
                    raise InvariantViolation(f"I5: writable user view of 0x{vpn:x}")
                looked = self._sigarea_lookup(spi, vpn)
                if looked is None:
                    raise InvariantViolation(f"I5: no tag for double map 0x{vpn:x}")
                version, tag = looked
                k_enc, k_mac = spi.keys
                try:
                    plain = sealing.unseal_page(
                        k_enc, k_mac, vpn, version,
                        self.mem.frame_bytes(pte_frame(cloak)), tag)
                except sealing.TagMismatch:
                    raise InvariantViolation(
                        f"I5: stale encrypted view of 0x{vpn:x}") from None
                if plain != self.mem.frame_bytes(pte_frame(user)):
                    raise InvariantViolation(f"I5: views diverge at 0x{vpn:x}")
            self._audit_suspended(spi)            # I6

    def _audit_suspended(self, spi: SensitiveProcessInfo) -> None:
        visible = self.kernel_hooks.kernel_visible_regs(spi.pgd)
        for sp, ctx in spi.saved.items():
            regs = visible.get(sp)
            if regs is None or ctx.kind is None:
                continue
            if ctx.kind is ExceptionKind.SYSCALL:
                bad = [i for i in (6,) if regs[i]]
            else:
                bad = [i for i in range(1, 8) if regs[i]]
            if bad:
                raise InvariantViolation(
                    f"I6: kernel sees registers {bad} of a suspended thread")

    def _audit_moves(self) -> None:
        for pgd, va, length, rw, cap_id in self.move_log[-64:]:    # I7
            if length < 0:
                raise InvariantViolation("I7: negative move length recorded")

    def scan_for_cleartext(self, windows: list[bytes]) -> list[int]:
        """I8 helper: offsets of any window found in physical memory."""
        hits = []
        blob = self.mem.data
        for w in windows:
            idx = bytes(blob).find(w)
            if idx != -1:
                hits.append(idx)
        return hits
