"""Kernel behavior through scenario runs: paging, syscalls, scheduling."""

from mpsim import harness


def test_demand_paging_fault_counts(corpus_runs):
    # touch_mmap stores into 16 fresh pages; with prefetch=1 each touch
    # faults once, with prefetch=16 the first touch maps the whole run
    lazy = corpus_runs["demand_touch"].metrics["page_faults"]["user"]
    eager = corpus_runs["demand_prefetch"].metrics["page_faults"]["user"]
    assert lazy == 16
    assert eager == 1


def test_brk_heap(corpus_runs):
    run = corpus_runs["plain_zero_crypto"]
    brk = next(p for p in run.processes.values() if p["name"] == "brk_prog")
    assert brk["stdout"] == b"heap ok\n" and brk["exit_code"] == 0


def test_fresh_mappings_are_zero(corpus_runs):
    run = corpus_runs["plain_zero_crypto"]
    fresh = next(p for p in run.processes.values()
                 if p["name"] == "fresh_zero")
    assert fresh["stdout"] == b"fresh\n" and fresh["exit_code"] == 0
    bss = next(p for p in run.processes.values() if p["name"] == "bss_touch")
    assert bss["stdout"] == b"bss ok\n" and bss["exit_code"] == 0


def test_iago_return_rejected(corpus_runs):
    run = corpus_runs["iago_mmap"]
    victim = run.processes[1]
    assert victim["killed"]
    assert victim["stdout"] == b""


def test_robust_futex_recovery(corpus_runs):
    run = corpus_runs["robust_recover"]
    assert run.processes[1]["stdout"] == b"recovered\n"
    assert run.metrics["robust_nodes_read"] == 1


def test_clear_child_tid(corpus_runs):
    for name in ("cleartid_wake", "cleartid_sealed"):
        run = corpus_runs[name]
        assert run.processes[1]["stdout"] == b"tid gone\n"
        assert run.processes[1]["exit_code"] == 0


def test_signal_frames(corpus_runs):
    for name in ("signal_frames", "signal_plain"):
        run = corpus_runs[name]
        assert run.processes[1]["stdout"] == b"ding\nmain done\n"
        assert run.metrics["signals_delivered"] == 1


def test_swap_tamper_kills_before_output(corpus_runs):
    run = corpus_runs["swap_tamper"]
    victim = run.processes[1]
    assert victim["killed"] and "failed verification" in victim["killed"]
    assert victim["stdout"] == b""
    assert run.metrics["processes_killed"] == 1


def test_multicore_runs_both(corpus_runs):
    run = corpus_runs["multicore_pair"]
    for pid in (1, 2):
        assert run.processes[pid]["stdout"].endswith(b"done\n")
        assert run.processes[pid]["exit_code"] == 0


def test_runs_are_deterministic():
    sc = harness.corpus()["relocate_storm"]
    a = harness.run_scenario(sc, "a")
    b = harness.run_scenario(sc, "b")
    a.name = b.name = "same"
    assert a.fingerprint() == b.fingerprint()
    assert a.log_lines == b.log_lines


def test_seeded_schedules_differ_but_replay():
    base = harness.corpus()["switch_pair_plain"]
    seeded = dict(base)
    seeded["schedule"] = {"seed": 3}
    x = harness.run_scenario(seeded, "x")
    y = harness.run_scenario(seeded, "x")
    assert x.fingerprint() == y.fingerprint()


def test_oom_reclaims_by_swapping():
    sc = harness._sc([{"prog": "touch_mmap", "params": {"pages": 64}}],
                     frames=96, max_steps=60_000)
    run = harness.run_scenario(sc, "tight")
    assert run.processes[1]["exit_code"] == 0
    assert run.metrics["swaps_out"] > 0
