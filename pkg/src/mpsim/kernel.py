"""The simulated OS kernel.

Untrusted by construction: it schedules threads, services syscalls, and
manages memory, but never writes a PTE (batches go through the monitor's
set_pts), never reads protected cleartext (copies go through memory_move
with a bounce buffer), and never touches vm-control registers directly
(writes trap to the monitor).  Everything it does to simulated memory goes
through the kernel-half linear map.

The kernel also doubles as the adversary harness: scripted events can make
it swap, compress, migrate, tamper with stores, forge resume state, or try
to map frames it should not.  Those paths exercise the monitor's checks;
they are not reachable from normal operation.
"""

from __future__ import annotations

import enum
import heapq
import random
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field

from . import imagefmt
from .guardian import (
    CLONE_CHILD_CLEARTID,
    CPGD_MAGIC,
    Guardian,
    GuardianDenied,
    PteUpdate,
    SYS_BRK,
    SYS_CLONE,
    SYS_EXIT,
    SYS_FUTEX,
    SYS_GETPID,
    SYS_MIGRATE_PAGES,
    SYS_MMAP,
    SYS_MUNMAP,
    SYS_OPEN,
    SYS_READ,
    SYS_SET_ROBUST_LIST,
    SYS_SET_TID_ADDRESS,
    SYS_SIGACTION,
    SYS_SIGALTSTACK,
    SYS_SIGRETURN,
    SYS_WRITE,
)
from .machine import (
    CpuCore,
    ExceptionKind,
    Fault,
    KERNEL_BASE,
    Machine,
    Mode,
    PAGE_SHIFT,
    PAGE_SIZE,
    pte_frame,
    pte_pack,
)

STACK_TOP = 0x0100_0000
STACK_PAGES = 4
MMAP_BASE = 0x0200_0000
HEAP_GAP = PAGE_SIZE
ROBUST_WALK_LIMIT = 64
SIG_FRAME_LEN = 64
PROT_WRITE = 0x2

FUTEX_WAIT = 0
FUTEX_WAKE = 1
OWNER_DIED_RET = 0x40

EPERM, ENOENT, EBADF, EAGAIN, ENOMEM, EFAULT, EINVAL = 1, 2, 9, 11, 12, 14, 22


def neg(errno: int) -> int:
    return (-errno) & 0xFFFFFFFF


RET_BLOCKED = object()     # thread parked; no return value yet
RET_NONE = object()        # nothing to merge into r0 (exit, sigreturn)
RET_PHASE = object()       # split syscall continues via continue_phase


class ThreadState(enum.Enum):
    READY = "ready"
    RUNNING = "running"
    INKERNEL = "inkernel"
    BLOCKED = "blocked"
    DEAD = "dead"


@dataclass
class VMA:
    start: int
    end: int
    perm: str            # "ro" | "rw"
    kind: str            # "image" | "stack" | "heap" | "anon" | "shim"

    def covers(self, va: int) -> bool:
        return self.start <= va < self.end


@dataclass
class OpenFile:
    path: str
    pos: int = 0


@dataclass
class FutexWaiter:
    thread: "Thread"
    owner_died: bool = False


class Thread:
    def __init__(self, tid: int, proc: "Process", sp: int, entry: int):
        self.tid = tid
        self.proc = proc
        self.state = ThreadState.READY
        self.kcontext = {"regs": [0] * 8, "sp": sp, "elr": entry}
        self.user_sp = sp              # identity key for monitor-side records
        self.pending_ret: int | None = None
        self.robust_head = 0
        self.clear_child_tid = 0
        self.pending_signal: int | None = None
        self.sigaltstack: tuple[int, int] | None = None
        self.sig_frames: list[int] = []
        self.phase: tuple | None = None
        self.blocked_on: tuple | None = None

    def __repr__(self):
        return f"<thread {self.tid} {self.state.value}>"


class Process:
    def __init__(self, pid: int, name: str, pgd: int, sensitive: bool):
        self.pid = pid
        self.name = name
        self.pgd = pgd
        self.cpgd = 0
        self.sensitive = sensitive
        self.vmas: list[VMA] = []
        self.page_frames: dict[int, int] = {}        # vpn -> frame
        self.page_store: dict[int, tuple[str, bytes]] = {}
        self.cloak_frames: dict[int, int] = {}
        self.l2_map: dict[int, int] = {}             # l1 index -> table frame
        self.cloak_l2_map: dict[int, int] = {}
        self.pt_frames: set[int] = set()
        self.root_frames: list[int] = []
        self.fds: dict[int, OpenFile] = {}
        self.next_fd = 3
        self.stdout = bytearray()
        self.heap_base = 0
        self.brk = 0
        self.mmap_next = MMAP_BASE
        self.threads: list[Thread] = []
        self.exit_code: int | None = None
        self.killed: str | None = None
        self.dead = False
        self.entry = 0
        self.trampoline_va = 0
        self.resume_va = 0
        self.sigarea_va = 0
        self.pinned_vpns: set[int] = set()
        self.sig_handlers: dict[int, int] = {}
        self.touch: dict[int, int] = {}
        self.forge_elr: int | None = None
        self.forge_regs_seed: int | None = None
        self.iago_mmap = False
        self.overreach_armed = False
        self.forge_budget = 0
        self.forge_rng: random.Random | None = None
        self.forge_vpns: list[int] = []

    def find_vma(self, va: int) -> VMA | None:
        for vma in self.vmas:
            if vma.covers(va):
                return vma
        return None

    def live_threads(self) -> list[Thread]:
        return [t for t in self.threads if t.state is not ThreadState.DEAD]


class Kernel:
    def __init__(self, machine: Machine, guardian: Guardian, metrics, log,
                 prefetch: int = 1):
        self.machine = machine
        self.guardian = guardian
        self.metrics = metrics
        self.log = log
        self.prefetch = max(1, prefetch)
        self.free_frames: list[int] = []
        self.bounce_pa = 0
        self.processes: dict[int, Process] = {}
        self.by_pgd: dict[int, Process] = {}
        self.next_pid = 1
        self.next_tid = 1
        self.runqueue: deque[Thread] = deque()
        self.current: dict[int, Thread | None] = {}
        self._rotate: dict[int, bool] = {}
        self.files: dict[str, bytearray] = {}
        self.futexes: dict[tuple[int, int], deque[FutexWaiter]] = {}
        self.futex_locks: dict[tuple[int, int], int] = {}    # key -> tid holding
        self.global_tick = 0
        self.chooser = None            # fn(kernel, candidates) -> Thread
        self.forced_next: Thread | None = None
        self.suppress_tick = False
        self.exhaustive = False
        self.futex_lockless = False    # deliberately broken variant for tests
        self.tick_callback = None      # fn(tick) -> None
        self.pending_events_fn = lambda: False
        self.pending_sig: dict[tuple[int, int], tuple[int, int, int]] = {}
        self.dispatch_count = 0
        self.attack_log: list[dict] = []
        guardian.kernel_hooks = self
        machine.kernel_dispatch = self.dispatch

    # ------------------------------------------------------------------
    # physical plumbing (always through the kernel-half linear map)

    def _core(self) -> CpuCore:
        return self.machine.cores[0]

    def kread(self, pa: int, length: int) -> bytes:
        return self.machine.mem_read(self._core(), KERNEL_BASE + pa, length,
                                     mode=Mode.KERNEL)

    def kwrite(self, pa: int, blob: bytes) -> None:
        self.machine.mem_write(self._core(), KERNEL_BASE + pa, blob,
                               mode=Mode.KERNEL)

    def alloc_frame(self) -> int:
        if not self.free_frames:
            self._reclaim_one()
        if not self.free_frames:
            raise MemoryError("out of physical frames")
        return heapq.heappop(self.free_frames)

    def free_frame(self, frame: int) -> None:
        heapq.heappush(self.free_frames, frame)

    def _reclaim_one(self) -> None:
        victim = None
        for proc in self.processes.values():
            if proc.dead:
                continue
            for vpn in proc.page_frames:
                if vpn in proc.pinned_vpns:
                    continue
                when = proc.touch.get(vpn, 0)
                if victim is None or when < victim[0]:
                    victim = (when, proc, vpn)
        if victim is not None:
            self.swap_out(victim[1], victim[2])

    # ------------------------------------------------------------------
    # page-table walks for the kernel's own view (reads only)

    def walk_user(self, proc: Process, va: int, root: int | None = None) -> int | None:
        root = proc.pgd if root is None else root
        l1 = struct.unpack("<I", self.kread(root + ((va >> 22) & 0x3FF) * 4, 4))[0]
        if not l1 & 0x1:
            return None
        leaf_pa = pte_frame(l1) * PAGE_SIZE + ((va >> PAGE_SHIFT) & 0x3FF) * 4
        leaf = struct.unpack("<I", self.kread(leaf_pa, 4))[0]
        if not leaf & 0x1:
            return None
        return pte_frame(leaf) * PAGE_SIZE + (va & (PAGE_SIZE - 1))

    # ------------------------------------------------------------------
    # user-memory copies: direct for plain processes, mediated otherwise

    def user_read(self, proc: Process, va: int, length: int) -> bytes | None:
        if proc.sensitive:
            return self._mediated_read(proc, va, length)
        out = bytearray()
        while length > 0:
            pa = self.walk_user(proc, va)
            if pa is None:
                if not self.handle_demand(proc, va, origin="os"):
                    return None
                continue
            chunk = min(length, PAGE_SIZE - (va & (PAGE_SIZE - 1)))
            out += self.kread(pa, chunk)
            va += chunk
            length -= chunk
        return bytes(out)

    def user_write(self, proc: Process, va: int, blob: bytes) -> bool:
        if proc.sensitive:
            return self._mediated_write(proc, va, blob)
        off = 0
        while off < len(blob):
            pa = self.walk_user(proc, va + off)
            if pa is None:
                if not self.handle_demand(proc, va + off, origin="os"):
                    return False
                continue
            chunk = min(len(blob) - off, PAGE_SIZE - ((va + off) & (PAGE_SIZE - 1)))
            self.kwrite(pa, blob[off:off + chunk])
            off += chunk
        return True

    def _bounce_kva(self) -> int:
        return KERNEL_BASE + self.bounce_pa

    def _zero_bounce(self) -> None:
        # staging buffers never keep process bytes around
        self.kwrite(self.bounce_pa, b"\x00" * PAGE_SIZE)

    def _mediated_read(self, proc: Process, va: int, length: int) -> bytes | None:
        out = bytearray()
        while length > 0:
            chunk = min(length, PAGE_SIZE)
            res = self._move_with_retry(proc, "to_kernel", va, chunk)
            if res is None:
                self._zero_bounce()
                return None
            moved = res
            out += self.kread(self.bounce_pa, moved)
            self._zero_bounce()
            if moved < chunk:
                break                    # clamped by a string capability
            va += chunk
            length -= chunk
        return bytes(out)

    def _mediated_write(self, proc: Process, va: int, blob: bytes) -> bool:
        off = 0
        while off < len(blob):
            chunk = min(len(blob) - off, PAGE_SIZE)
            self.kwrite(self.bounce_pa, blob[off:off + chunk])
            res = self._move_with_retry(proc, "to_user", va + off, chunk)
            self._zero_bounce()
            if res is None:
                return False
            off += chunk
        return True

    def _move_with_retry(self, proc: Process, direction: str, va: int,
                         length: int) -> int | None:
        for _ in range(8):
            res = self.guardian.memory_move(direction, proc.pgd, va,
                                            self._bounce_kva(), length)
            if res.status == "ok":
                return res.moved
            if res.status == "need_page":
                if not self.handle_demand(proc, res.fault_va, origin="os"):
                    return None
                continue
            return None
        return None

    # ------------------------------------------------------------------
    # PTE update batches

    def _commit(self, updates: list[PteUpdate]) -> list[str]:
        results = []
        for i in range(0, len(updates), 16):
            results += self.guardian.set_pts(updates[i:i + 16])
        return results

    def _map_pages(self, proc: Process, items: list[tuple[int, int]],
                   root: int | None = None) -> list[str]:
        """items: (vpn, leaf word). Donates L2 tables as needed."""
        root = proc.pgd if root is None else root
        l2map = proc.l2_map if root == proc.pgd else proc.cloak_l2_map
        updates = []
        donated: list[tuple[int, int]] = []
        for vpn, entry in items:
            tf = None
            l1 = vpn >> 10
            if l1 not in l2map:
                tf = self.alloc_frame()
                l2map[l1] = tf
                proc.pt_frames.add(tf)
                donated.append((l1, tf))
            updates.append(PteUpdate(root=root, vpn=vpn, entry=entry,
                                     table_frame=tf))
        results: list[str] = []
        done = 0
        try:
            for i in range(0, len(updates), 16):
                results += self.guardian.set_pts(updates[i:i + 16])
                done = i + 16
        except GuardianDenied:
            # rejected batches never created their tables; forget the donations
            undone = {u.table_frame for u in updates[done:] if u.table_frame}
            for l1, tf in donated:
                if tf in undone:
                    l2map.pop(l1, None)
                    proc.pt_frames.discard(tf)
                    self.free_frame(tf)
            raise
        return results

    def _unmap_pages(self, proc: Process, vpns: list[int],
                     root: int | None = None) -> None:
        root = proc.pgd if root is None else root
        self._commit([PteUpdate(root=root, vpn=v, entry=0) for v in vpns])

    # ------------------------------------------------------------------
    # process setup

    def register_file(self, path: str, data: bytes) -> None:
        self.files[path] = bytearray(data)

    def exec_load(self, name: str, blob: bytes, argv: list[str],
                  sensitive: bool) -> Process:
        image = imagefmt.parse(blob)
        if sensitive != image.is_adapted():
            raise ValueError("sensitive flag does not match the image kind")
        pid = self.next_pid
        self.next_pid += 1
        pgd_frame = self.alloc_frame()
        proc = Process(pid, name, pgd_frame * PAGE_SIZE, sensitive)
        proc.root_frames.append(pgd_frame)
        proc.entry = image.entry
        self.processes[pid] = proc
        self.by_pgd[proc.pgd] = proc

        top = 0
        items = []
        for seg in image.segments:
            perm = "rw" if seg.flags & imagefmt.SegFlags.W else "ro"
            span = seg.page_span()
            proc.vmas.append(VMA(span.start * PAGE_SIZE, span.stop * PAGE_SIZE,
                                 perm, "image"))
            top = max(top, span.stop * PAGE_SIZE)
            for vpn in span:
                off = vpn * PAGE_SIZE - seg.vaddr
                content = seg.data[off:off + PAGE_SIZE] if off < len(seg.data) else b""
                frame = self.alloc_frame()
                if content:
                    self.kwrite(frame * PAGE_SIZE,
                                content + b"\x00" * (PAGE_SIZE - len(content)))
                proc.page_frames[vpn] = frame
                items.append((vpn, pte_pack(frame, writable=perm == "rw", user=True)))
            if seg.type == imagefmt.SegType.TRAMPOLINE:
                proc.trampoline_va = seg.vaddr
                proc.resume_va = seg.vaddr + 8
                proc.pinned_vpns.add(seg.vaddr >> PAGE_SHIFT)
            elif seg.type == imagefmt.SegType.SIGAREA:
                proc.sigarea_va = seg.vaddr
                proc.pinned_vpns.update(span)

        stack_lo = STACK_TOP - STACK_PAGES * PAGE_SIZE
        proc.vmas.append(VMA(stack_lo, STACK_TOP, "rw", "stack"))
        for vpn in range(stack_lo >> PAGE_SHIFT, STACK_TOP >> PAGE_SHIFT):
            frame = self.alloc_frame()
            proc.page_frames[vpn] = frame
            items.append((vpn, pte_pack(frame, writable=True, user=True)))

        proc.heap_base = top + HEAP_GAP
        proc.brk = proc.heap_base

        self._map_pages(proc, items)
        sp = self._write_argv(proc, argv)

        thread = Thread(self.next_tid, proc, sp, image.entry)
        self.next_tid += 1
        proc.threads.append(thread)
        self.runqueue.append(thread)
        self.log.write("exec", pid=pid, name=name, entry=hex(image.entry),
                       sensitive=int(sensitive))
        return proc

    def _write_argv(self, proc: Process, argv: list[str]) -> int:
        strings = b"".join(a.encode() + b"\x00" for a in argv)
        ptr_block = 4 + 4 * len(argv)
        total = (ptr_block + len(strings) + 15) & ~15
        sp = STACK_TOP - total
        blob = struct.pack("<I", len(argv))
        str_base = sp + ptr_block
        off = 0
        for a in argv:
            blob += struct.pack("<I", str_base + off)
            off += len(a) + 1
        blob += strings
        # stacks are plain frames until the process opts into protection
        va = sp
        for chunk_off in range(0, len(blob), PAGE_SIZE):
            pa = self.walk_user(proc, va + chunk_off)
            chunk = blob[chunk_off:chunk_off + PAGE_SIZE]
            avail = PAGE_SIZE - ((va + chunk_off) & (PAGE_SIZE - 1))
            if len(chunk) > avail:
                self.kwrite(pa, chunk[:avail])
                pa2 = self.walk_user(proc, va + chunk_off + avail)
                self.kwrite(pa2, chunk[avail:])
            else:
                self.kwrite(pa, chunk)
        return sp

    # ------------------------------------------------------------------
    # exception dispatch

    def dispatch(self, core: CpuCore, kind: ExceptionKind) -> None:
        self.dispatch_count += 1
        try:
            thread = self.current.get(core.core_id)
            if thread is not None:
                self._save_live(core, thread)
            if kind is ExceptionKind.TIMER_INTERRUPT:
                self._do_timer(core)
            elif thread is None:
                raise GuardianDenied("exception with no current thread")
            elif kind is ExceptionKind.SYSCALL:
                self._do_syscall(core, thread)
            elif kind in (ExceptionKind.PAGE_FAULT, ExceptionKind.PERMISSION_FAULT):
                self._do_fault(core, thread, kind)
            elif kind is ExceptionKind.UNDEFINED_INSTRUCTION:
                self.kill_process(thread.proc, "undefined instruction")
        except GuardianDenied as denied:
            if denied.fatal_pgd is not None:
                victim = self.by_pgd.get(denied.fatal_pgd)
                if victim is not None:
                    self.kill_process(victim, denied.reason)
            else:
                self.log.write("denied", reason=denied.reason)
        self._resume_next(core)

    def _save_live(self, core: CpuCore, thread: Thread) -> None:
        thread.kcontext = {"regs": list(core.regs), "sp": core.sp,
                           "elr": core.elr}

    def _do_timer(self, core: CpuCore) -> None:
        if not self.suppress_tick:
            self.global_tick += 1
            self.metrics.ticks += 1
            if self.tick_callback is not None:
                self.tick_callback(self.global_tick)
        self._rotate[core.core_id] = True

    def _do_fault(self, core: CpuCore, thread: Thread, kind: ExceptionKind) -> None:
        proc = thread.proc
        va = core.esr[1] if core.esr else 0
        self.metrics.page_faults["user"] += 1
        if proc.sensitive and self.walk_user(proc, va) is not None:
            return          # monitor already arranged the outcome; just resume
        vma = proc.find_vma(va)
        if vma is None:
            self.kill_process(proc, f"segv at 0x{va:08x}")
            return
        if kind is ExceptionKind.PERMISSION_FAULT:
            if proc.sensitive:
                return      # contained by the monitor; resume through the shim
            self.kill_process(proc, f"write to read-only 0x{va:08x}")
            return
        if not self.handle_demand(proc, va, origin="user"):
            self.kill_process(proc, f"unservable fault at 0x{va:08x}")

    def handle_demand(self, proc: Process, va: int, origin: str) -> bool:
        vpn = va >> PAGE_SHIFT
        vma = proc.find_vma(va)
        if vma is None or proc.dead:
            return False
        if origin == "os":
            self.metrics.page_faults["os"] += 1
        if vpn in proc.page_frames:
            return True
        if vpn in proc.page_store:
            return self.restore_page(proc, vpn)
        items = []
        for v in range(vpn, min(vpn + self.prefetch, vma.end >> PAGE_SHIFT)):
            if v in proc.page_frames or v in proc.page_store:
                if v == vpn:
                    return True
                break
            frame = self.alloc_frame()
            self.kwrite(frame * PAGE_SIZE, b"\x00" * PAGE_SIZE)
            proc.page_frames[v] = frame
            proc.touch[v] = self.global_tick
            items.append((v, pte_pack(frame, writable=vma.perm == "rw", user=True)))
        self._map_pages(proc, items)
        return True

    # ------------------------------------------------------------------
    # scheduling

    def _do_rotate(self, core: CpuCore) -> bool:
        return self._rotate.pop(core.core_id, False)

    def _resume_next(self, core: CpuCore) -> None:
        if core.mode is not Mode.KERNEL:
            return            # the monitor resumed or parked this core itself
        cur = self.current.get(core.core_id)
        rotate = self._do_rotate(core)
        if cur is not None and cur.state is ThreadState.RUNNING and not rotate:
            self._finish_eret(core, cur)
            return
        if cur is not None and cur.state is ThreadState.RUNNING:
            cur.state = ThreadState.READY
            self.runqueue.append(cur)
        nxt = self._pick()
        if nxt is None:
            self.current[core.core_id] = None
            return
        if nxt is not cur:
            self.metrics.context_switches += 1
        self.current[core.core_id] = nxt
        nxt.state = ThreadState.RUNNING
        self._finish_eret(core, nxt)

    def _pick(self) -> Thread | None:
        if self.forced_next is not None:
            t = self.forced_next
            self.forced_next = None
            if t.state is ThreadState.READY:
                self.runqueue.remove(t)
                return t
            return None
        if not self.runqueue:
            return None
        if self.chooser is not None:
            t = self.chooser(self, list(self.runqueue))
            self.runqueue.remove(t)
            return t
        return self.runqueue.popleft()

    def _finish_eret(self, core: CpuCore, thread: Thread) -> None:
        proc = thread.proc
        if thread.pending_signal is not None:
            if not self._deliver_signal(core, thread):
                return       # default action killed the process
        ctx = thread.kcontext
        for i in range(8):
            core.regs[i] = ctx["regs"][i]
        core.sp = ctx["sp"]
        core.elr = ctx["elr"]
        if thread.pending_ret is not None:
            core.regs[0] = thread.pending_ret
            thread.pending_ret = None
        family = {proc.pgd}
        if proc.cpgd not in (0, CPGD_MAGIC):
            family.add(proc.cpgd)
        if core.ttbr0 not in family:
            if not self.machine.write_vm_control(core, "ttbr0", proc.pgd):
                self.kill_process(proc, "address space rejected")
                self.current[core.core_id] = None
                return
        if proc.forge_elr is not None:
            core.elr = proc.forge_elr
            proc.forge_elr = None
            self.log.write("forge_elr_applied", pid=proc.pid, elr=hex(core.elr))
        if proc.forge_regs_seed is not None:
            seed = proc.forge_regs_seed
            proc.forge_regs_seed = None
            for i in range(8):
                core.regs[i] = (seed * (i + 0x9E3779B1)) & 0xFFFFFFFF
            self.log.write("forge_regs_applied", pid=proc.pid)
        if proc.forge_budget > 0 and proc.forge_rng is not None:
            proc.forge_budget -= 1
            rng = proc.forge_rng
            if rng.randrange(2) == 0 and proc.forge_vpns:
                vpn = proc.forge_vpns[rng.randrange(len(proc.forge_vpns))]
                core.elr = (vpn << 12) | (rng.randrange(1024) * 4)
                self.attack_log.append({"kind": "forge_elr", "pid": proc.pid,
                                        "elr": core.elr})
            else:
                for i in range(8):
                    core.regs[i] = rng.randrange(1 << 32)
                self.attack_log.append({"kind": "forge_regs", "pid": proc.pid})
        self.machine.eret(core)

    def try_dispatch(self, core: CpuCore) -> bool:
        """Driver hook: put something on an idle core."""
        if core.mode is not Mode.KERNEL or self.current.get(core.core_id):
            return False
        nxt = self._pick()
        if nxt is None:
            return False
        self.current[core.core_id] = nxt
        nxt.state = ThreadState.RUNNING
        self.metrics.context_switches += 1
        self._finish_eret(core, nxt)
        return True

    def advance_idle_tick(self) -> bool:
        """All cores idle: move time forward so scripted events can fire."""
        if not self.pending_events_fn():
            return False
        self.global_tick += 1
        self.metrics.ticks += 1
        if self.tick_callback is not None:
            self.tick_callback(self.global_tick)
        return True

    def any_runnable(self) -> bool:
        return bool(self.runqueue) or any(self.current.values())

    def any_blocked(self) -> bool:
        return any(t.state in (ThreadState.BLOCKED, ThreadState.INKERNEL)
                   for p in self.processes.values() for t in p.threads)

    def all_dead(self) -> bool:
        return all(p.dead for p in self.processes.values())

    def handle_halt(self, core: CpuCore) -> None:
        thread = self.current.get(core.core_id)
        if thread is None:
            return
        # HALT is only a shim guard; reaching it means control flow went wrong
        core.mode = Mode.KERNEL
        self.kill_process(thread.proc, "halted outside the protocol")

    # ------------------------------------------------------------------
    # syscalls

    def _do_syscall(self, core: CpuCore, thread: Thread) -> None:
        self.metrics.syscalls += 1
        sid = core.reg(7)
        a = [core.reg(i) for i in range(6)]
        proc = thread.proc
        handler = {
            SYS_READ: lambda: self.sys_read(proc, a[0], a[1], a[2]),
            SYS_WRITE: lambda: self.sys_write(proc, a[0], a[1], a[2]),
            SYS_OPEN: lambda: self.sys_open(proc, a[0]),
            SYS_MMAP: lambda: self.sys_mmap(proc, a[0], a[1], a[2]),
            SYS_BRK: lambda: self.sys_brk(proc, a[0]),
            SYS_MUNMAP: lambda: self.sys_munmap(proc, a[0], a[1]),
            SYS_FUTEX: lambda: self.sys_futex(proc, thread, a[0], a[1], a[2]),
            SYS_CLONE: lambda: self.sys_clone(proc, thread, a[0], a[1], a[2], a[3]),
            SYS_EXIT: lambda: self.sys_exit(core, proc, thread, a[0]),
            SYS_SET_ROBUST_LIST: lambda: self.sys_set_robust_list(thread, a[0]),
            SYS_SET_TID_ADDRESS: lambda: self.sys_set_tid_address(thread, a[0]),
            SYS_SIGACTION: lambda: self.sys_sigaction(proc, a[0], a[1]),
            SYS_SIGALTSTACK: lambda: self.sys_sigaltstack(thread, a[0], a[1]),
            SYS_SIGRETURN: lambda: self.sys_sigreturn(proc, thread),
            SYS_MIGRATE_PAGES: lambda: self.sys_migrate_pages(proc),
            SYS_GETPID: lambda: proc.pid,
        }.get(sid)
        if handler is None:
            ret = neg(EINVAL)
        else:
            ret = handler()
        if ret is RET_BLOCKED:
            thread.state = ThreadState.BLOCKED
        elif ret is RET_PHASE:
            thread.state = ThreadState.INKERNEL
        elif ret is not RET_NONE and thread.state is not ThreadState.DEAD:
            thread.pending_ret = ret & 0xFFFFFFFF

    def sys_read(self, proc: Process, fd: int, buf: int, count: int) -> int:
        of = proc.fds.get(fd)
        if fd == 0:
            return 0
        if of is None:
            return neg(EBADF)
        data = bytes(self.files.get(of.path, b"")[of.pos:of.pos + count])
        if not self.user_write(proc, buf, data):
            return neg(EFAULT)
        of.pos += len(data)
        return len(data)

    def sys_write(self, proc: Process, fd: int, buf: int, count: int) -> int:
        if proc.overreach_armed and proc.sensitive:
            # probe one byte either side of the granted window
            proc.overreach_armed = False
            for va, length in ((buf - 1, count), (buf, count + 1)):
                status = self.attempt_move_overreach(proc, va, length)
                self.attack_log.append({"kind": "overreach", "pid": proc.pid,
                                        "va": va, "len": length,
                                        "status": status})
        data = self.user_read(proc, buf, count)
        if data is None:
            return neg(EFAULT)
        if fd in (1, 2):
            proc.stdout += data
            return len(data)
        of = proc.fds.get(fd)
        if of is None:
            return neg(EBADF)
        blob = self.files.setdefault(of.path, bytearray())
        end = of.pos + len(data)
        if len(blob) < end:
            blob.extend(b"\x00" * (end - len(blob)))
        blob[of.pos:end] = data
        of.pos = end
        return len(data)

    def sys_open(self, proc: Process, path_ptr: int) -> int:
        raw = self.user_read(proc, path_ptr, 4096)
        if raw is None:
            return neg(EFAULT)
        path = raw.split(b"\x00", 1)[0].decode(errors="replace")
        if path not in self.files:
            return neg(ENOENT)
        fd = proc.next_fd
        proc.next_fd += 1
        proc.fds[fd] = OpenFile(path=path)
        return fd

    def sys_mmap(self, proc: Process, addr: int, length: int, prot: int) -> int:
        if length == 0:
            return neg(EINVAL)
        size = (length + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)
        if proc.iago_mmap:
            proc.iago_mmap = False
            bad = proc.vmas[0].start          # overlaps the image on purpose
            self.log.write("iago_mmap", pid=proc.pid, ret=hex(bad))
            return bad
        va = proc.mmap_next
        proc.mmap_next = va + size
        perm = "rw" if prot & PROT_WRITE else "ro"
        proc.vmas.append(VMA(va, va + size, perm, "anon"))
        return va

    def sys_brk(self, proc: Process, new_brk: int) -> int:
        if new_brk == 0:
            return proc.brk
        new_end = (new_brk + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)
        old_end = (proc.brk + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)
        if new_brk < proc.heap_base:
            return neg(EINVAL)
        heap = next((v for v in proc.vmas if v.kind == "heap"), None)
        if heap is None and new_end > proc.heap_base:
            proc.vmas.append(VMA(proc.heap_base, new_end, "rw", "heap"))
        elif heap is not None:
            if new_end < old_end:
                self._drop_range(proc, new_end, old_end)
            heap.end = new_end
        proc.brk = new_end
        return new_end

    def sys_munmap(self, proc: Process, addr: int, length: int) -> int:
        if addr % PAGE_SIZE or length == 0:
            return neg(EINVAL)
        end = addr + ((length + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1))
        kept = []
        for vma in proc.vmas:
            if vma.start >= end or vma.end <= addr:
                kept.append(vma)
                continue
            if vma.start < addr:
                kept.append(VMA(vma.start, addr, vma.perm, vma.kind))
            if vma.end > end:
                kept.append(VMA(end, vma.end, vma.perm, vma.kind))
        proc.vmas = kept
        self._drop_range(proc, addr, end)
        return 0

    def _drop_range(self, proc: Process, start: int, end: int) -> None:
        vpns = [v for v in range(start >> PAGE_SHIFT, end >> PAGE_SHIFT)
                if v in proc.page_frames]
        if vpns:
            self._unmap_pages(proc, vpns)
            for v in vpns:
                self.free_frame(proc.page_frames.pop(v))
                cloak = proc.cloak_frames.pop(v, None)
                if cloak is not None:
                    self.free_frame(cloak)
                proc.touch.pop(v, None)
        for v in range(start >> PAGE_SHIFT, end >> PAGE_SHIFT):
            proc.page_store.pop(v, None)

    # futexes -----------------------------------------------------------

    def _futex_key(self, proc: Process, uaddr: int) -> tuple[int, int]:
        return (proc.pid, uaddr)

    def _read_futex_word(self, proc: Process, uaddr: int) -> int | None:
        raw = self.user_read(proc, uaddr, 4)
        if raw is None or len(raw) != 4:
            return None
        return struct.unpack("<I", raw)[0]

    def sys_futex(self, proc: Process, thread: Thread, uaddr: int, op: int,
                  val: int) -> object:
        key = self._futex_key(proc, uaddr)
        if self.exhaustive:
            thread.phase = ("futex", op, uaddr, val, "start")
            return RET_PHASE
        if op == FUTEX_WAIT:
            cur = self._read_futex_word(proc, uaddr)
            if cur is None:
                return neg(EFAULT)
            if cur != val:
                return neg(EAGAIN)
            self.futexes.setdefault(key, deque()).append(FutexWaiter(thread))
            thread.blocked_on = key
            return RET_BLOCKED
        if op == FUTEX_WAKE:
            return self._futex_wake(key, val)
        return neg(EINVAL)

    def _futex_wake(self, key: tuple[int, int], limit: int,
                    owner_died: bool = False) -> int:
        bucket = self.futexes.get(key)
        woken = 0
        while bucket and woken < limit:
            waiter = bucket.popleft()
            if waiter.thread.state is not ThreadState.BLOCKED:
                continue
            ret = OWNER_DIED_RET if (owner_died or waiter.owner_died) else 0
            self._wake(waiter.thread, ret)
            woken += 1
        return woken

    def _wake(self, thread: Thread, ret: int) -> None:
        thread.state = ThreadState.READY
        thread.blocked_on = None
        thread.pending_ret = ret
        self.runqueue.append(thread)

    # split-phase futex for the interleaving explorer --------------------

    def phase_enabled(self, thread: Thread) -> bool:
        if thread.phase is None:
            return False
        _, op, uaddr, _val, stage = thread.phase
        key = self._futex_key(thread.proc, uaddr)
        holder = self.futex_locks.get(key)
        if stage == "start":
            return holder is None or holder == thread.tid
        return True          # already holds the bucket lock

    def continue_phase(self, thread: Thread) -> None:
        _, op, uaddr, val, stage = thread.phase
        proc = thread.proc
        key = self._futex_key(proc, uaddr)
        if op == FUTEX_WAIT:
            if stage == "start":
                self.futex_locks[key] = thread.tid
                cur = self._read_futex_word(proc, uaddr)
                if cur is None or cur != val:
                    del self.futex_locks[key]
                    thread.phase = None
                    thread.state = ThreadState.READY
                    thread.pending_ret = neg(EFAULT if cur is None else EAGAIN)
                    self.runqueue.append(thread)
                    return
                if self.futex_lockless:
                    del self.futex_locks[key]     # broken: window before enqueue
                thread.phase = ("futex", op, uaddr, val, "enqueue")
                return
            if stage == "enqueue":
                self.futexes.setdefault(key, deque()).append(FutexWaiter(thread))
                if not self.futex_lockless:
                    del self.futex_locks[key]
                thread.phase = None
                thread.blocked_on = key
                thread.state = ThreadState.BLOCKED
                return
        if op == FUTEX_WAKE:
            self.futex_locks[key] = thread.tid
            woken = self._futex_wake(key, val)
            del self.futex_locks[key]
            thread.phase = None
            thread.state = ThreadState.READY
            thread.pending_ret = woken
            self.runqueue.append(thread)
            return
        thread.phase = None
        thread.state = ThreadState.READY
        thread.pending_ret = neg(EINVAL)
        self.runqueue.append(thread)

    # threads and teardown ------------------------------------------------

    def sys_clone(self, proc: Process, parent: Thread, flags: int,
                  ctid: int, child_sp: int, child_pc: int) -> int:
        child = Thread(self.next_tid, proc, child_sp,
                       proc.resume_va if proc.sensitive else child_pc)
        self.next_tid += 1
        if proc.sensitive:
            child.kcontext["regs"] = [0] * 8
        else:
            regs = list(parent.kcontext["regs"])
            regs[0] = 0
            child.kcontext["regs"] = regs
        if flags & CLONE_CHILD_CLEARTID:
            child.clear_child_tid = ctid
        proc.threads.append(child)
        self.runqueue.append(child)
        self.log.write("clone", pid=proc.pid, tid=child.tid, sp=hex(child_sp))
        return child.tid

    def sys_set_robust_list(self, thread: Thread, head: int) -> int:
        thread.robust_head = head
        return 0

    def sys_set_tid_address(self, thread: Thread, ptr: int) -> int:
        thread.clear_child_tid = ptr
        return thread.tid

    def sys_exit(self, core: CpuCore, proc: Process, thread: Thread,
                 code: int) -> object:
        self._exit_thread(proc, thread, code)
        return RET_NONE

    def _exit_thread(self, proc: Process, thread: Thread, code: int) -> None:
        if thread.robust_head:
            self._run_robust_list(proc, thread)
        if thread.clear_child_tid:
            self.user_write(proc, thread.clear_child_tid, b"\x00" * 4)
            self._futex_wake(self._futex_key(proc, thread.clear_child_tid), 1)
        thread.state = ThreadState.DEAD
        for c, t in list(self.current.items()):
            if t is thread:
                self.current[c] = None
        if proc.sensitive:
            self.guardian.thread_reap(proc.pgd, thread.user_sp)
        self.log.write("thread_exit", pid=proc.pid, tid=thread.tid, code=code)
        if not proc.live_threads():
            proc.exit_code = code
            self.teardown_process(proc)

    def _run_robust_list(self, proc: Process, thread: Thread) -> None:
        if proc.sensitive:
            res = self.guardian.memory_move("to_kernel", proc.pgd,
                                            thread.robust_head, 0, 0,
                                            op="walk_list")
            nodes = res.nodes if res.status == "nodes" else []
        else:
            nodes = []
            va = thread.robust_head
            seen = set()
            for _ in range(ROBUST_WALK_LIMIT):
                if va == 0 or va in seen:
                    break
                seen.add(va)
                raw = self.user_read(proc, va, 8)
                if raw is None:
                    break
                futex_va, nxt = struct.unpack("<II", raw)
                nodes.append((va, futex_va))
                va = nxt
        for _node_va, futex_va in nodes:
            self._futex_wake(self._futex_key(proc, futex_va), 1, owner_died=True)

    def teardown_process(self, proc: Process) -> None:
        if proc.dead:
            return
        proc.dead = True
        for t in proc.threads:
            if t.state is not ThreadState.DEAD:
                t.state = ThreadState.DEAD
            if t in self.runqueue:
                self.runqueue.remove(t)
        for c, t in list(self.current.items()):
            if t is not None and t.proc is proc:
                self.current[c] = None
        for key in [k for k in self.futexes if k[0] == proc.pid]:
            del self.futexes[key]
        for core in self.machine.cores:
            if core.ttbr0 in (proc.pgd, proc.cpgd) and core.mode is not Mode.USER:
                # kernel mode traps to the monitor; monitor mode applies directly
                self.machine.write_vm_control(core, "ttbr0", 0)
        unpinned = [v for v in proc.page_frames if v not in proc.pinned_vpns]
        self._unmap_pages(proc, unpinned)
        for v in unpinned:
            self.free_frame(proc.page_frames.pop(v))
            cloak = proc.cloak_frames.pop(v, None)
            if cloak is not None:
                self.free_frame(cloak)
        try:
            self.guardian.free_pgd(proc.pgd)
        except GuardianDenied as denied:
            self.log.write("free_pgd_denied", pid=proc.pid, reason=denied.reason)
        for v in list(proc.page_frames):
            self.free_frame(proc.page_frames.pop(v))
        for f in proc.cloak_frames.values():
            self.free_frame(f)
        proc.cloak_frames.clear()
        for f in proc.pt_frames:
            self.free_frame(f)
        cpgd_frame = proc.cpgd >> PAGE_SHIFT if proc.cpgd not in (0, CPGD_MAGIC) else None
        for f in proc.root_frames:
            self.free_frame(f)
        if cpgd_frame is not None and cpgd_frame not in proc.root_frames:
            self.free_frame(cpgd_frame)
        proc.page_store.clear()
        self.by_pgd.pop(proc.pgd, None)
        self.log.write("process_end", pid=proc.pid,
                       exit=proc.exit_code if proc.exit_code is not None else "killed")

    def kill_process(self, proc: Process, reason: str) -> None:
        if proc.dead:
            return
        proc.killed = reason
        self.metrics.processes_killed += 1
        self.log.write("kill", pid=proc.pid, reason=reason)
        self.teardown_process(proc)

    # signals -------------------------------------------------------------

    def sys_sigaction(self, proc: Process, signum: int, handler: int) -> int:
        proc.sig_handlers[signum] = handler
        return 0

    def sys_sigaltstack(self, thread: Thread, base: int, size: int) -> int:
        thread.sigaltstack = (base, size)
        return 0

    def sys_sigreturn(self, proc: Process, thread: Thread) -> object:
        if proc.sensitive:
            return RET_NONE          # the monitor unbanks the interrupted context
        if not thread.sig_frames:
            self.kill_process(proc, "sigreturn without a frame")
            return RET_NONE
        frame_va = thread.sig_frames.pop()
        raw = self.user_read(proc, frame_va, 44)
        if raw is None:
            self.kill_process(proc, "signal frame unreadable")
            return RET_NONE
        vals = struct.unpack("<11I", raw)
        thread.kcontext["regs"] = list(vals[:8])
        thread.kcontext["sp"] = vals[8]
        thread.kcontext["elr"] = vals[9]
        thread.pending_ret = None
        return RET_NONE

    def send_signal(self, proc: Process, signum: int) -> None:
        live = proc.live_threads()
        if live:
            live[0].pending_signal = signum

    def _deliver_signal(self, core: CpuCore, thread: Thread) -> bool:
        proc = thread.proc
        signum = thread.pending_signal
        thread.pending_signal = None
        handler = proc.sig_handlers.get(signum)
        if handler is None:
            self.kill_process(proc, f"unhandled signal {signum}")
            self.current[core.core_id] = None
            return False
        if proc.sensitive:
            if thread.sigaltstack is None:
                self.kill_process(proc, f"signal {signum} with no alternate stack")
                self.current[core.core_id] = None
                return False
            base, size = thread.sigaltstack
            frame_sp = base + size - SIG_FRAME_LEN
            marker = b"SIGF" + struct.pack("<I", signum)
            if not self.user_write(proc, frame_sp,
                                   marker + b"\x00" * (SIG_FRAME_LEN - len(marker))):
                self.kill_process(proc, "signal frame unwritable")
                self.current[core.core_id] = None
                return False
            self.pending_sig[(proc.pgd, thread.user_sp)] = (signum, handler, frame_sp)
        else:
            ctx = thread.kcontext
            if thread.sigaltstack is not None:
                base, size = thread.sigaltstack
                frame_va = base + size - SIG_FRAME_LEN
            else:
                frame_va = (ctx["sp"] - SIG_FRAME_LEN) & ~3
            frame = struct.pack("<11I", *ctx["regs"], ctx["sp"], ctx["elr"], signum)
            if not self.user_write(proc, frame_va, frame):
                self.kill_process(proc, "signal frame unwritable")
                self.current[core.core_id] = None
                return False
            thread.sig_frames.append(frame_va)
            regs = [0] * 8
            regs[0] = signum
            thread.kcontext = {"regs": regs, "sp": frame_va, "elr": handler}
        self.metrics.signals_delivered += 1
        self.log.write("signal", pid=proc.pid, signum=signum, handler=hex(handler))
        return True

    # ------------------------------------------------------------------
    # paging operations (also driven by scripted events)

    def ensure_cloak(self, proc: Process, vpn: int) -> bool:
        if vpn in proc.cloak_frames:
            return True
        if vpn not in proc.page_frames:
            return False
        return self.os_page_fault(proc.pgd, vpn << PAGE_SHIFT)

    def os_page_fault(self, pgd: int, va: int) -> bool:
        """Build the encrypted view of one page (monitor seals into our frame)."""
        proc = self.by_pgd.get(pgd)
        if proc is None or not proc.sensitive:
            return False
        vpn = va >> PAGE_SHIFT
        self.metrics.page_faults["os"] += 1
        frame = self.alloc_frame()
        entry = pte_pack(frame, writable=False, user=False)
        if proc.cpgd == CPGD_MAGIC:
            root_frame = self.alloc_frame()
            table = self.alloc_frame()
            proc.root_frames.append(root_frame)
            proc.pt_frames.add(table)
            proc.cloak_l2_map[vpn >> 10] = table
            results = self._commit([PteUpdate(root=root_frame * PAGE_SIZE, vpn=vpn,
                                              entry=entry, table_frame=table,
                                              cloak_of=proc.pgd)])
            proc.cpgd = root_frame * PAGE_SIZE
        else:
            results = self._map_pages(proc, [(vpn, entry)], root=proc.cpgd)
        if results and results[-1] == "sealed":
            proc.cloak_frames[vpn] = frame
        else:
            self.free_frame(frame)       # alias or rejection: frame unused
        return True

    def set_cpgd_magic(self, pgd: int, value: int) -> None:
        proc = self.by_pgd.get(pgd)
        if proc is not None:
            proc.cpgd = value

    def swap_out(self, proc: Process, vpn: int, compress: bool = False) -> bool:
        if vpn in proc.pinned_vpns or vpn not in proc.page_frames or proc.dead:
            return False
        if proc.sensitive:
            if not self.ensure_cloak(proc, vpn):
                return False
            payload = self.kread(proc.cloak_frames[vpn] * PAGE_SIZE, PAGE_SIZE)
        else:
            payload = self.kread(proc.page_frames[vpn] * PAGE_SIZE, PAGE_SIZE)
        if compress:
            proc.page_store[vpn] = ("zip", zlib.compress(payload))
            self.metrics.compressions += 1
        else:
            proc.page_store[vpn] = ("swap", payload)
        self._unmap_pages(proc, [vpn])
        self.free_frame(proc.page_frames.pop(vpn))
        cloak = proc.cloak_frames.pop(vpn, None)
        if cloak is not None:
            self.free_frame(cloak)
        proc.touch.pop(vpn, None)
        self.metrics.swaps_out += 1
        self.log.write("swap_out", pid=proc.pid, vpn=hex(vpn),
                       zipped=int(compress))
        return True

    def restore_page(self, proc: Process, vpn: int) -> bool:
        stored = proc.page_store.pop(vpn, None)
        if stored is None:
            return False
        kind, blob = stored
        payload = zlib.decompress(blob) if kind == "zip" else blob
        vma = proc.find_vma(vpn << PAGE_SHIFT)
        if vma is None:
            return False
        frame = self.alloc_frame()
        self.kwrite(frame * PAGE_SIZE, payload)
        self._map_pages(proc, [(vpn, pte_pack(frame, writable=vma.perm == "rw",
                                              user=True))])
        proc.page_frames[vpn] = frame
        proc.touch[vpn] = self.global_tick
        self.metrics.swaps_in += 1
        self.log.write("restore", pid=proc.pid, vpn=hex(vpn))
        return True

    def migrate_page(self, proc: Process, vpn: int) -> bool:
        if vpn in proc.pinned_vpns or vpn not in proc.page_frames or proc.dead:
            return False
        vma = proc.find_vma(vpn << PAGE_SHIFT)
        if vma is None:
            return False
        if proc.sensitive:
            if not self.ensure_cloak(proc, vpn):
                return False
            payload = self.kread(proc.cloak_frames[vpn] * PAGE_SIZE, PAGE_SIZE)
        else:
            payload = self.kread(proc.page_frames[vpn] * PAGE_SIZE, PAGE_SIZE)
        self._unmap_pages(proc, [vpn])
        self.free_frame(proc.page_frames.pop(vpn))
        cloak = proc.cloak_frames.pop(vpn, None)
        if cloak is not None:
            self.free_frame(cloak)
        frame = self.alloc_frame()
        self.kwrite(frame * PAGE_SIZE, payload)
        self._map_pages(proc, [(vpn, pte_pack(frame, writable=vma.perm == "rw",
                                              user=True))])
        proc.page_frames[vpn] = frame
        proc.touch[vpn] = self.global_tick
        self.metrics.migrations += 1
        return True

    def sys_migrate_pages(self, proc: Process) -> int:
        moved = 0
        for vpn in sorted(proc.page_frames):
            if self.migrate_page(proc, vpn):
                moved += 1
        return moved

    # ------------------------------------------------------------------
    # monitor hooks

    def on_guardian_kill(self, pgd: int) -> None:
        proc = self.by_pgd.get(pgd)
        if proc is not None:
            self.kill_process(proc, "protection violation")

    def suspend_cloak_reader(self, pgd: int, vpn: int) -> str | None:
        proc = self.by_pgd.get(pgd)
        if proc is None:
            return None
        frame = proc.cloak_frames.pop(vpn, None)
        if frame is None:
            return None
        self.free_frame(frame)
        return "os-reader"

    def process_layout(self, pgd: int) -> tuple[int, int] | None:
        proc = self.by_pgd.get(pgd)
        if proc is None:
            return None
        stack = next((v for v in proc.vmas if v.kind == "stack"), None)
        return (stack.start, stack.end) if stack else None

    def heap_region(self, pgd: int) -> tuple[int, int] | None:
        proc = self.by_pgd.get(pgd)
        if proc is None:
            return None
        heap = next((v for v in proc.vmas if v.kind == "heap"), None)
        if heap is not None:
            return (heap.start, heap.end)
        return (proc.heap_base, proc.heap_base)

    def take_pending_signal(self, pgd: int, sp: int) -> tuple[int, int, int] | None:
        return self.pending_sig.pop((pgd, sp), None)

    def kernel_visible_regs(self, pgd: int) -> dict[int, list[int]]:
        proc = self.by_pgd.get(pgd)
        if proc is None:
            return {}
        return {t.kcontext["sp"]: t.kcontext["regs"] for t in proc.threads
                if t.state in (ThreadState.BLOCKED, ThreadState.READY,
                               ThreadState.INKERNEL)}

    # ------------------------------------------------------------------
    # adversarial actions for scripted scenarios

    def raw_read_attempt(self, proc: Process, va: int, length: int) -> tuple[str, bytes]:
        """Read process memory through the kernel's own view of it."""
        root = proc.cpgd if proc.sensitive and proc.cpgd not in (0, CPGD_MAGIC) \
            else proc.pgd
        out = bytearray()
        probe = va
        while len(out) < length:
            pa = self.walk_user(proc, probe, root=root)
            if pa is None:
                return ("unmapped", bytes(out))
            chunk = min(length - len(out), PAGE_SIZE - (probe & (PAGE_SIZE - 1)))
            try:
                out += self.kread(pa, chunk)
            except Fault:
                return ("faulted", bytes(out))
            probe += chunk
        return ("ok", bytes(out))

    def tamper_store(self, proc: Process, vpn: int, bit: int) -> bool:
        stored = proc.page_store.get(vpn)
        if stored is None:
            return False
        kind, blob = stored
        mutated = bytearray(blob)
        mutated[(bit // 8) % len(mutated)] ^= 1 << (bit % 8)
        proc.page_store[vpn] = (kind, bytes(mutated))
        self.log.write("tamper", pid=proc.pid, vpn=hex(vpn), bit=bit)
        return True

    def attempt_cross_map(self, victim: Process, vpn: int, attacker: Process) -> str:
        frame = victim.page_frames.get(vpn)
        if frame is None:
            return "no-frame"
        try:
            self._map_pages(attacker,
                            [(vpn, pte_pack(frame, writable=True, user=True))])
            return "mapped"
        except GuardianDenied as denied:
            return f"denied: {denied.reason}"

    def attempt_pt_write(self, proc: Process) -> str:
        if not proc.pt_frames:
            return "no-table"
        table = sorted(proc.pt_frames)[0]
        try:
            self.kwrite(table * PAGE_SIZE, b"\xff" * 4)
            return "written"
        except Fault as f:
            return f"faulted: {f.kind.name}"

    def attempt_move_overreach(self, proc: Process, va: int, length: int) -> str:
        res = self.guardian.memory_move("to_kernel", proc.pgd, va,
                                        self._bounce_kva(), length)
        self._zero_bounce()
        return res.status
