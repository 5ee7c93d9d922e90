"""Boot assembly: memory layout, kernel-half linear map, vector tables.

Physical layout, by frame:
    0..31       monitor code/data reserve, never mapped anywhere
    32          kernel-half master root (shared by every core's ttbr1)
    33..33+n    linear-map L2 tables, one per 1024 frames
    next two    normal and secure vector tables
    next        bounce frame for mediated copies
    rest        free pool handed to the kernel allocator

Everything the monitor later relies on (root/table/vector frames read-only
in the linear map, monitor frames absent from it) is established here, and
the per-frame bookkeeping starts out exactly matching the mappings.
"""

from __future__ import annotations

from dataclasses import dataclass

from .guardian import FrameKind, Guardian, RootInfo
from .kernel import Kernel
from .machine import (
    ExceptionKind,
    KERNEL_BASE,
    Machine,
    PAGE_SIZE,
    SECURE_SLOT_WORD,
    descriptor_word,
    pte_pack,
)
from .telemetry import EventLog, Metrics

GUARDIAN_FRAMES = 32


@dataclass
class System:
    machine: Machine
    guardian: Guardian
    kernel: Kernel
    metrics: Metrics
    log: EventLog


def build_system(frame_count: int = 16384, cores: int = 1, tick: int = 1000,
                 prefetch: int = 1) -> System:
    machine = Machine(frame_count=frame_count, cores=cores, tick=tick)
    metrics = Metrics()
    log = EventLog()
    guardian = Guardian(machine, metrics, log)

    mem = machine.mem
    n_l2 = (frame_count + 1023) // 1024
    root = GUARDIAN_FRAMES
    l2_first = root + 1
    ivt_normal = l2_first + n_l2
    ivt_secure = ivt_normal + 1
    bounce = ivt_secure + 1
    first_free = bounce + 1

    root_pa = root * PAGE_SIZE
    for i in range(n_l2):
        mem.write_u32(root_pa + (512 + i) * 4, pte_pack(l2_first + i))

    ro_frames = {root, ivt_normal, ivt_secure} | set(range(l2_first, l2_first + n_l2))
    for frame in range(frame_count):
        slot = (l2_first + (frame >> 10)) * PAGE_SIZE + (frame & 0x3FF) * 4
        if frame < GUARDIAN_FRAMES:
            continue                       # monitor frames stay unmapped
        mem.write_u32(slot, pte_pack(frame, writable=frame not in ro_frames))

    for kind in ExceptionKind:
        desc = descriptor_word(kind)
        mem.write_u32(ivt_normal * PAGE_SIZE + int(kind) * 16, desc)
        mem.write_u32(ivt_secure * PAGE_SIZE + int(kind) * 16, SECURE_SLOT_WORD)
        mem.write_u32(ivt_secure * PAGE_SIZE + int(kind) * 16 + 4, desc)

    for frame in range(frame_count):
        fi = guardian.frames[frame]
        if frame < GUARDIAN_FRAMES:
            fi.kind = FrameKind.GUARDIAN
            fi.refcount = 0
        elif frame == root:
            fi.kind = FrameKind.PAGE_TABLE
            fi.refcount = 1                # linear leaf; ttbr1 is a register
        elif l2_first <= frame < l2_first + n_l2:
            fi.kind = FrameKind.PAGE_TABLE
            fi.refcount = 2                # master L1 slot + its own linear leaf
        elif frame in (ivt_normal, ivt_secure):
            fi.kind = FrameKind.IVT
            fi.refcount = 1
        elif frame == bounce:
            fi.kind = FrameKind.PLAIN
            fi.refcount = 1
        else:
            fi.kind = FrameKind.FREE
            fi.refcount = 1

    guardian.kernel_root = root_pa
    guardian.roots[root_pa] = RootInfo(
        kind="kernel", tables=set(range(l2_first, l2_first + n_l2)))
    guardian.linear_l2_first = l2_first
    guardian.normal_vbar = KERNEL_BASE + ivt_normal * PAGE_SIZE
    guardian.secure_vbar = KERNEL_BASE + ivt_secure * PAGE_SIZE

    for core in machine.cores:
        core.ttbr1 = root_pa
        core.ttbr0 = 0
        core.vbar = guardian.normal_vbar
        core.trap_vm = True
        core.sctlr_mmu = True

    kernel = Kernel(machine, guardian, metrics, log, prefetch=prefetch)
    kernel.bounce_pa = bounce * PAGE_SIZE
    kernel.free_frames = list(range(first_free, frame_count))

    machine.guardian_exception = guardian.exception_entry
    machine.guardian_smc = guardian.smc
    machine.vmcr_handler = guardian.vmcr_trap

    guardian.audit()        # the boot state itself must satisfy the invariants
    return System(machine=machine, guardian=guardian, kernel=kernel,
                  metrics=metrics, log=log)
