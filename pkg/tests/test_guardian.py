"""Monitor reference checks: mapping matrix, batches, teardown scrub."""

import pytest

from mpsim import harness
from mpsim.guardian import BATCH_LIMIT, FrameKind, GuardianDenied, PteUpdate
from mpsim.machine import PAGE_SIZE, pte_pack
from mpsim.system import build_system


@pytest.fixture()
def booted():
    sysm = build_system(frame_count=256, cores=1, tick=200)
    sysm.guardian.audit()
    return sysm


def test_boot_passes_audit(booted):
    g = booted.guardian
    kinds = [fi.kind for fi in g.frames]
    assert kinds.count(FrameKind.GUARDIAN) >= 32
    assert FrameKind.PAGE_TABLE in kinds and FrameKind.IVT in kinds


def test_batch_limit(booted):
    g, kern = booted.guardian, booted.kernel
    proc = kern.exec_load("spin", _spin_blob(), [], False)
    frame = kern.alloc_frame()
    upd = PteUpdate(root=proc.pgd, vpn=0x60,
                    entry=pte_pack(frame, writable=True, user=True))
    with pytest.raises(GuardianDenied, match="batch size"):
        g.set_pts([upd] * (BATCH_LIMIT + 1))
    with pytest.raises(GuardianDenied, match="batch size"):
        g.set_pts([])


def _spin_blob() -> bytes:
    from mpsim import progs
    return progs.build("spin_forever")


def test_unknown_root_denied(booted):
    g, kern = booted.guardian, booted.kernel
    stray = kern.alloc_frame()
    target = kern.alloc_frame()
    upd = PteUpdate(root=stray * PAGE_SIZE, vpn=1,
                    entry=pte_pack(target, user=True))
    with pytest.raises(GuardianDenied):
        g.set_pts([upd])


def test_writable_table_mapping_denied(booted):
    g, kern = booted.guardian, booted.kernel
    proc = kern.exec_load("spin", _spin_blob(), [], False)
    table = next(iter(proc.pt_frames))
    upd = PteUpdate(root=proc.pgd, vpn=0x61,
                    entry=pte_pack(table, writable=True, user=True))
    with pytest.raises(GuardianDenied, match="table|vector"):
        g.set_pts([upd])
    # read-only aliasing of a table frame is allowed for debugging
    ro = PteUpdate(root=proc.pgd, vpn=0x61, entry=pte_pack(table, user=True))
    assert g.set_pts([ro]) == ["mapped"]


def test_guardian_frame_mapping_denied(booted):
    g, kern = booted.guardian, booted.kernel
    proc = kern.exec_load("spin", _spin_blob(), [], False)
    upd = PteUpdate(root=proc.pgd, vpn=0x61, entry=pte_pack(3, user=True))
    with pytest.raises(GuardianDenied, match="monitor"):
        g.set_pts([upd])


def test_batch_is_atomic(booted):
    g, kern = booted.guardian, booted.kernel
    proc = kern.exec_load("spin", _spin_blob(), [], False)
    good_frame = kern.alloc_frame()
    good = PteUpdate(root=proc.pgd, vpn=0x62,
                     entry=pte_pack(good_frame, writable=True, user=True))
    bad = PteUpdate(root=proc.pgd, vpn=0x63, entry=pte_pack(3, user=True))
    with pytest.raises(GuardianDenied):
        g.set_pts([good, bad])
    # the valid half must not have been applied
    assert not g._leaf(proc.pgd, 0x62) & 1
    g.audit()


def test_cross_process_backmap_denied(corpus_runs):
    run = corpus_runs["cross_map_attack"]
    attacks = [a for a in run.attacks if a["kind"] == "cross_map"]
    assert attacks and all(a["status"].startswith("denied") for a in attacks)


def test_move_denied_without_capability(booted):
    g, kern = booted.guardian, booted.kernel
    from mpsim import adapter, progs, sealing
    blob = adapter.adapt(progs.build("spin_forever"), sealing.keygen(3))
    proc = kern.exec_load("spin", blob, [], True)
    before = booted.metrics.denied_moves
    res = g.memory_move("to_kernel", proc.pgd, 0x2000, 0, 16)
    assert res.status == "denied"
    assert booted.metrics.denied_moves == before + 1


def test_teardown_scrubs_owner_frames(corpus_runs):
    run = corpus_runs["teardown_scrub"]
    g = run.system.guardian
    dead_pgds = {p.pgd for p in run.system.kernel.processes.values() if p.dead}
    for frame, fi in enumerate(g.frames):
        assert not (fi.kind is FrameKind.SENSITIVE_USER
                    and fi.owner in dead_pgds)
    scans = [a for a in run.attacks if a["kind"] == "scan"]
    assert scans and all(a["hits"] == [] for a in scans)


def test_forged_context_never_restored(corpus_runs):
    run = corpus_runs["forge_storm"]
    g = run.system.guardian
    banked = {}
    for b in g.bank_trace:
        banked.setdefault((b["pgd"], b["sp"]), []).append(b)
    paired = 0
    for res in g.resume_trace:
        queue = banked.get((res["pgd"], res["sp"]))
        assert queue, f"resume without a banked context: {res}"
        src = queue.pop(0)       # per sp, banks and resumes strictly alternate
        assert res["pc"] == src["pc"]
        assert res["regs"][1:] == src["regs"][1:]
        if not res.get("ret_merged"):
            assert res["regs"][0] == src["regs"][0]
        paired += 1
    assert paired == len(g.resume_trace) > 0
