"""MMU walk and user ISA against hand-computed expectations."""

import pytest

from mpsim.machine import (
    Access,
    ConfigError,
    ExceptionKind,
    Fault,
    Machine,
    MachineError,
    Mode,
    Op,
    PAGE_SIZE,
    encode,
    encode_imm,
    pte_frame,
    pte_pack,
)


def bare_machine() -> Machine:
    m = Machine(frame_count=64, cores=1)
    core = m.cores[0]
    core.sctlr_mmu = True
    core.trap_vm = True
    return m


def test_pte_pack_layout():
    # bit0 present, bit1 writable, bit2 user, frame from bit 12
    assert pte_pack(7, writable=True, user=True) == 0x7007
    assert pte_pack(7) == 0x7001
    assert pte_pack(0x12345) == (0x12345 << 12) & 0xFFFFF000 | 1
    assert pte_frame(0x7007) == 7


def test_hand_walk():
    # L1[0] -> table frame 5; table[1] -> frame 7 rw+user.
    # va 0x1234: l1 index 0, l2 index 1, offset 0x234 -> pa 0x7234.
    m = bare_machine()
    core = m.cores[0]
    root = 4 * PAGE_SIZE
    m.mem.write_u32(root + 0 * 4, pte_pack(5))
    m.mem.write_u32(5 * PAGE_SIZE + 1 * 4, pte_pack(7, writable=True, user=True))
    core.ttbr0 = root
    core.mode = Mode.USER
    assert m.translate(core, 0x1234, Access.READ) == 0x7234
    assert m.translate(core, 0x1FFF, Access.WRITE) == 0x7FFF
    assert m.translate(core, 0x1000, Access.EXECUTE) == 0x7000


def test_walk_fault_matrix():
    m = bare_machine()
    core = m.cores[0]
    root = 4 * PAGE_SIZE
    m.mem.write_u32(root, pte_pack(5))
    m.mem.write_u32(5 * PAGE_SIZE + 4, pte_pack(7, writable=False, user=True))
    m.mem.write_u32(5 * PAGE_SIZE + 8, pte_pack(8, writable=True, user=False))
    core.ttbr0 = root
    core.mode = Mode.USER

    with pytest.raises(Fault) as e:
        m.translate(core, 0x5000, Access.READ)          # leaf absent
    assert e.value.kind is ExceptionKind.PAGE_FAULT
    with pytest.raises(Fault) as e:
        m.translate(core, 0x1000, Access.WRITE)         # read-only leaf
    assert e.value.kind is ExceptionKind.PERMISSION_FAULT
    with pytest.raises(Fault) as e:
        m.translate(core, 0x2000, Access.READ)          # supervisor leaf
    assert e.value.kind is ExceptionKind.PERMISSION_FAULT
    with pytest.raises(Fault) as e:
        m.translate(core, 0x8000_0000, Access.READ)     # kernel half from user
    assert e.value.kind is ExceptionKind.PAGE_FAULT

    core.mode = Mode.KERNEL
    assert m.translate(core, 0x2000, Access.WRITE) == 8 * PAGE_SIZE
    with pytest.raises(MachineError):
        m.translate(core, 0x1000, Access.READ, mode=Mode.MONITOR)


def test_mmu_off_is_a_config_error():
    m = Machine(frame_count=64)
    with pytest.raises(ConfigError):
        m.translate(m.cores[0], 0x1000, Access.READ)


def _user_setup(m: Machine, code: bytes, data: bytes = b""):
    """Map code at va 0x1000 (frame 7, x) and data at 0x2000 (frame 8, rw)."""
    core = m.cores[0]
    root = 4 * PAGE_SIZE
    m.mem.write_u32(root, pte_pack(5))
    m.mem.write_u32(5 * PAGE_SIZE + 1 * 4, pte_pack(7, user=True))
    m.mem.write_u32(5 * PAGE_SIZE + 2 * 4, pte_pack(8, writable=True, user=True))
    m.mem.write(7 * PAGE_SIZE, code)
    if data:
        m.mem.write(8 * PAGE_SIZE, data)
    core.ttbr0 = root
    core.mode = Mode.USER
    core.pc = 0x1000
    return core


def test_isa_golden_walk():
    m = bare_machine()
    taken = []
    m.kernel_dispatch = lambda core, kind: taken.append(kind)
    code = b"".join([
        encode_imm(Op.MOVI, 0, 0x2000),      # r0 = data va
        encode_imm(Op.MOVI, 1, 5),
        encode(Op.LD, 2, 0),                 # r2 = [0x2000] = 0x11223344
        encode(Op.ADD, 3, 2, 1),             # r3 = r2 + 5
        encode(Op.ST, 3, 0),                 # [0x2000] = r3
        encode_imm(Op.JZ, 1, 0x28),          # not taken, r1 != 0
        encode_imm(Op.MOVI, 4, 0xBEEF),
        encode_imm(Op.JMP, 0, 0x24),         # skip back over the MOVI
        encode(Op.NOP),
        encode(Op.HALT),
    ])
    core = _user_setup(m, code, data=b"\x44\x33\x22\x11")
    for _ in range(8):
        m.step(core)
    assert core.regs[2] == 0x11223344
    assert core.regs[3] == 0x11223349
    assert m.mem.read_u32(8 * PAGE_SIZE) == 0x11223349
    assert core.regs[4] == 0xBEEF
    # JMP went page-relative: 0x24 within the code page
    assert core.pc == 0x1024


def test_add_wraps_to_32_bits():
    m = bare_machine()
    code = encode_imm(Op.MOVI, 0, 0xFFFF) + encode(Op.ADD, 0, 0, 0)
    core = _user_setup(m, code)
    m.step(core)                             # MOVI
    for n in range(1, 18):
        core.pc = 0x1004
        m.step(core)                         # one doubling per pass
        assert core.regs[0] == (0xFFFF << n) & 0xFFFFFFFF


def test_sp_not_reachable_from_user_isa():
    # no opcode reads or writes sp; a full register clobber leaves it alone
    m = bare_machine()
    code = b"".join(encode_imm(Op.MOVI, r, 0xAAAA) for r in range(8))
    core = _user_setup(m, code)
    core.sp = 0x1357
    for _ in range(8):
        m.step(core)
    assert core.sp == 0x1357
    assert all(r == 0xAAAA for r in core.regs)


def test_timer_cadence():
    m = Machine(frame_count=64, cores=1, tick=16)
    core = m.cores[0]
    core.sctlr_mmu = True
    timers = []
    m.kernel_dispatch = lambda c, kind: timers.append((kind, c.instr_count))
    # IVT with plain descriptor slots so the timer routes to the kernel hook
    from mpsim.machine import IVT_STRIDE, KERNEL_BASE, descriptor_word
    ivt_frame = 9
    for kind in ExceptionKind:
        m.mem.write_u32(ivt_frame * PAGE_SIZE + int(kind) * IVT_STRIDE,
                        descriptor_word(kind))
    root = 4 * PAGE_SIZE
    m.mem.write_u32(root, pte_pack(10))
    m.mem.write_u32(10 * PAGE_SIZE + 1 * 4, pte_pack(7, user=True))
    m.mem.write(7 * PAGE_SIZE, encode_imm(Op.JMP, 0, 0))   # spin at 0x1000
    kroot = 6 * PAGE_SIZE
    m.mem.write_u32(kroot + (KERNEL_BASE >> 22) * 4, pte_pack(5))
    m.mem.write_u32(5 * PAGE_SIZE + ivt_frame * 4, pte_pack(ivt_frame))
    core.ttbr0 = root
    core.ttbr1 = kroot
    core.vbar = KERNEL_BASE + ivt_frame * PAGE_SIZE
    core.mode = Mode.USER
    core.pc = 0x1000
    for _ in range(64):
        m.step(core)
        if core.mode is not Mode.USER:
            core.mode = Mode.USER            # fake an eret and keep spinning
            core.pc = 0x1000
    assert timers
    assert all(k is ExceptionKind.TIMER_INTERRUPT for k, _ in timers)
    assert all(n % 16 == 0 for _, n in timers)
