"""Scenario driver: boot, scripted events, fixture corpus, cycle report,
and the exhaustive interleaving explorer.

A scenario is a plain JSON-able dict:

    {"machine":  {"frames": 1024, "tick": 200, "cores": 1, "prefetch": 1},
     "files":    {"/in/f.bin": {"text": "..."}},
     "programs": [{"prog": "hello", "sensitive": true, "params": {...}}],
     "events":   [{"at_tick": 3, "kind": "swap_out", "pid": 1, "va": 8192}],
     "limits":   {"max_steps": 400000},
     "cleartext_windows": [{"text": "TOP-SECRET"}],
     "audit_every_entry": false}

Events fire from the timer path, so tick 0 means "before the first
instruction".  Every fired event is followed by a full invariant audit.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
import zlib
from dataclasses import dataclass, field

from . import adapter, imagefmt, progs, sealing
from .guardian import FrameKind, GuardianDenied, InvariantViolation, PteUpdate
from .kernel import Kernel, Process, ThreadState
from .machine import ExceptionKind, Mode, StepResult, pte_pack
from .system import System, build_system

# ---------------------------------------------------------------------------
# cycle accounting

DEFAULT_WEIGHTS = {
    "user_to_kernel": 44,
    "kernel_to_user": 31,
    "kernel_to_monitor": 43,
    "monitor_to_user": 17,
    "monitor_to_kernel": 36,
    "el2_surcharge": 1685,
}

# which privilege crossings each monitor entry pays for
ENTRY_LEGS = {
    "vmcr_trap": ("kernel_to_monitor", "monitor_to_kernel"),
    "set_pts": ("kernel_to_monitor", "monitor_to_kernel"),
    "free_pgd": ("kernel_to_monitor", "monitor_to_kernel"),
    "memory_move": ("kernel_to_monitor", "monitor_to_kernel"),
    "exception": ("user_to_kernel", "kernel_to_monitor", "monitor_to_kernel"),
    "process_resume": ("user_to_kernel", "kernel_to_monitor", "monitor_to_user"),
    "process_start": ("el2_surcharge", "monitor_to_user"),
}


def cycle_report(metrics: dict, weights: dict | None = None) -> dict:
    """Linear cost model: counter dot weights, one row per event kind."""
    w = dict(DEFAULT_WEIGHTS)
    if weights:
        w.update(weights)
    rows = []
    total = 0
    for name in sorted(metrics.get("guardian_entries", {})):
        count = metrics["guardian_entries"][name]
        per = sum(w[leg] for leg in ENTRY_LEGS[name])
        rows.append({"event": name, "count": count,
                     "cycles_each": per, "cycles": count * per})
        total += count * per
    switches = metrics.get("context_switches", 0)
    per = w["kernel_to_user"]
    rows.append({"event": "switch_eret", "count": switches,
                 "cycles_each": per, "cycles": switches * per})
    total += switches * per
    return {"rows": rows, "total_cycles": total, "weights": w}


# ---------------------------------------------------------------------------
# scenario plumbing


class ScenarioError(Exception):
    pass


def _blob(spec) -> bytes:
    if isinstance(spec, dict):
        if "text" in spec:
            return spec["text"].encode()
        if "hex" in spec:
            return bytes.fromhex(spec["hex"])
    raise ScenarioError(f"bad data spec {spec!r}")


def _program_blob(ps: dict) -> bytes:
    if "prog" in ps:
        try:
            return progs.build(ps["prog"], **ps.get("params", {}))
        except KeyError as err:
            raise ScenarioError(str(err)) from None
    if "image_path" in ps:
        with open(ps["image_path"], "rb") as fh:
            return fh.read()
    if "image_hex" in ps:
        return bytes.fromhex(ps["image_hex"])
    raise ScenarioError("program entry needs prog, image_path or image_hex")


def _boot(scenario: dict, exhaustive: bool = False) -> System:
    mc = scenario.get("machine", {})
    sysm = build_system(frame_count=mc.get("frames", 1024),
                        cores=mc.get("cores", 1),
                        tick=mc.get("tick", 200),
                        prefetch=mc.get("prefetch", 1))
    kern = sysm.kernel
    sysm.guardian.audit_every_entry = bool(scenario.get("audit_every_entry",
                                                        False))
    kern.exhaustive = exhaustive
    kern.futex_lockless = scenario.get("futex") == "lockless"
    for path, spec in (scenario.get("files") or {}).items():
        kern.files[path] = bytearray(_blob(spec))
    for i, ps in enumerate(scenario.get("programs", [])):
        blob = _program_blob(ps)
        sensitive = bool(ps.get("sensitive"))
        if sensitive and not imagefmt.parse(blob).is_adapted():
            seed = ps.get("seed", scenario.get("adapter_seed", 7))
            blob = adapter.adapt(blob, sealing.keygen(seed))
        name = ps.get("name") or ps.get("prog") or f"p{i + 1}"
        kern.exec_load(name, blob, ps.get("argv", []), sensitive)
    sched = scenario.get("schedule") or {}
    if sched.get("seed") is not None:
        rng = random.Random(sched["seed"])
        kern.chooser = lambda _k, cands: cands[rng.randrange(len(cands))]
    return sysm


@dataclass
class RunResult:
    name: str
    steps: int
    metrics: dict
    log_lines: list[str]
    snapshots: list[dict]
    attacks: list[dict]
    processes: dict[int, dict]
    deadlocked: bool
    system: System | None = field(repr=False, default=None)

    def stdout(self, pid: int = 1) -> bytes:
        return self.processes[pid]["stdout"]

    def fingerprint(self) -> str:
        basis = {
            "stdout": {pid: p["stdout"].hex() for pid, p in
                       sorted(self.processes.items())},
            "exit": {pid: (p["exit_code"], p["killed"]) for pid, p in
                     sorted(self.processes.items())},
            "metrics": self.metrics,
            "log": self.log_lines,
        }
        return hashlib.sha256(
            json.dumps(basis, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "steps": self.steps,
            "deadlocked": self.deadlocked,
            "metrics": self.metrics,
            "snapshots": self.snapshots,
            "attacks": self.attacks,
            "processes": {
                pid: {**p, "stdout": p["stdout"].decode("latin1")}
                for pid, p in self.processes.items()},
        }


class _EventEngine:
    def __init__(self, sysm: System, events: list[dict],
                 windows: list[bytes]):
        self.sysm = sysm
        self.kern = sysm.kernel
        self.queue = sorted(events, key=lambda e: e.get("at_tick", 0))
        self.windows = windows
        self.attacks: list[dict] = []
        self.snapshots: list[dict] = []

    def pending(self) -> bool:
        return bool(self.queue)

    def on_tick(self, tick: int) -> None:
        while self.queue and self.queue[0].get("at_tick", 0) <= tick:
            ev = self.queue.pop(0)
            self._fire(ev)
            self.sysm.guardian.audit()
            self._scan_visible()

    def _scan_visible(self) -> None:
        """Cleartext windows must never appear where the OS can read:
        any frame outside the protected kinds, or a swapped-out page."""
        if not self.windows:
            return
        g = self.sysm.guardian
        page = imagefmt.PAGE
        hidden = {f for f, fi in enumerate(g.frames)
                  if fi.kind in (FrameKind.SENSITIVE_USER, FrameKind.GUARDIAN)}
        blob = bytes(g.mem.data)
        for w in self.windows:
            start = 0
            while (idx := blob.find(w, start)) != -1:
                touched = range(idx // page, (idx + len(w) - 1) // page + 1)
                if not any(f in hidden for f in touched):
                    raise InvariantViolation(
                        f"I8: cleartext window visible to the OS at 0x{idx:x}")
                start = idx + 1
        for proc in self.kern.processes.values():
            if not proc.sensitive:
                continue
            for vpn, (kind, payload) in proc.page_store.items():
                raw = zlib.decompress(payload) if kind == "zip" else payload
                if any(w in raw for w in self.windows):
                    raise InvariantViolation(
                        f"I8: cleartext window in swapped page 0x{vpn:x}")

    def _fire(self, ev: dict) -> None:
        handler = getattr(self, "_ev_" + ev["kind"], None)
        if handler is None:
            raise ScenarioError(f"unknown event kind {ev['kind']!r}")
        try:
            handler(ev)
        except GuardianDenied as denied:
            self.attacks.append({"kind": ev["kind"], "status": "denied",
                                 "reason": denied.reason})
            if denied.fatal_pgd is not None:
                victim = self.kern.by_pgd.get(denied.fatal_pgd)
                if victim is not None:
                    self.kern.kill_process(victim, denied.reason)

    def _proc(self, ev: dict, key: str = "pid") -> Process:
        proc = self.kern.processes.get(ev[key])
        if proc is None:
            raise ScenarioError(f"event names unknown pid {ev[key]}")
        return proc

    def _eligible(self, proc: Process) -> list[int]:
        return [v for v in sorted(proc.page_frames)
                if v not in proc.pinned_vpns]

    # -- bookkeeping -------------------------------------------------

    def _ev_snapshot(self, ev: dict) -> None:
        self.snapshots.append({
            "tick": self.kern.global_tick,
            "metrics": copy.deepcopy(self.kern.metrics.to_dict())})

    def _ev_kill(self, ev: dict) -> None:
        self.kern.kill_process(self._proc(ev), "scripted kill")

    # -- paging pressure ----------------------------------------------

    def _ev_swap_out(self, ev: dict) -> None:
        self.kern.swap_out(self._proc(ev), ev["va"] >> 12,
                           ev.get("compress", False))

    def _ev_restore(self, ev: dict) -> None:
        self.kern.restore_page(self._proc(ev), ev["va"] >> 12)

    def _ev_migrate(self, ev: dict) -> None:
        proc = self._proc(ev)
        count = ev.get("count", 1)
        elig = self._eligible(proc)
        for i in range(count):
            self.kern.migrate_page(proc, elig[i % len(elig)])

    def _ev_storm(self, ev: dict) -> None:
        proc = self._proc(ev)
        rng = random.Random(ev.get("seed", 0))
        for _ in range(ev.get("steps", 200)):
            op = rng.choice(("swap", "swap_z", "migrate", "restore"))
            if op in ("swap", "swap_z"):
                elig = self._eligible(proc)
                if elig:
                    self.kern.swap_out(proc, rng.choice(elig), op == "swap_z")
            elif op == "migrate":
                elig = self._eligible(proc)
                if elig:
                    self.kern.migrate_page(proc, rng.choice(elig))
            else:
                stored = sorted(proc.page_store)
                if stored:
                    self.kern.restore_page(proc, rng.choice(stored))

    def _ev_send_signal(self, ev: dict) -> None:
        self.kern.send_signal(self._proc(ev), ev.get("signum", 5))

    # -- the adversarial kernel ----------------------------------------

    def _ev_encrypt_view(self, ev: dict) -> None:
        proc = self._proc(ev)
        ok = self.kern.ensure_cloak(proc, ev["va"] >> 12)
        self.attacks.append({"kind": "encrypt_view", "pid": proc.pid,
                             "va": ev["va"], "status": "ok" if ok else "no"})

    def _ev_raw_read(self, ev: dict) -> None:
        proc = self._proc(ev)
        status, data = self.kern.raw_read_attempt(proc, ev["va"],
                                                  ev.get("len", 64))
        self.attacks.append({"kind": "raw_read", "pid": proc.pid,
                             "va": ev["va"], "vpn": ev["va"] >> 12,
                             "status": status, "hex": data.hex()})

    def _ev_suspend_reader(self, ev: dict) -> None:
        proc = self._proc(ev)
        who = self.kern.suspend_cloak_reader(proc.pgd, ev["va"] >> 12)
        self.attacks.append({"kind": "suspend_reader", "pid": proc.pid,
                             "status": who or "none"})

    def _ev_scan(self, ev: dict) -> None:
        hits = self.sysm.guardian.scan_for_cleartext(self.windows)
        self.attacks.append({"kind": "scan", "hits": hits})

    def _ev_swap_tamper(self, ev: dict) -> None:
        proc = self._proc(ev)
        vpn = ev["va"] >> 12
        self.kern.swap_out(proc, vpn, ev.get("compress", False))
        self.kern.tamper_store(proc, vpn, ev.get("bit", 777))
        self.attacks.append({"kind": "swap_tamper", "pid": proc.pid,
                             "vpn": vpn, "bit": ev.get("bit", 777),
                             "status": "tampered"})

    def _ev_cross_map(self, ev: dict) -> None:
        victim = self._proc(ev, "victim")
        attacker = self._proc(ev, "attacker")
        status = self.kern.attempt_cross_map(victim, ev["va"] >> 12, attacker)
        self.attacks.append({"kind": "cross_map", "victim": victim.pid,
                             "attacker": attacker.pid, "status": status})

    def _ev_pt_write(self, ev: dict) -> None:
        proc = self._proc(ev)
        status = self.kern.attempt_pt_write(proc)
        self.attacks.append({"kind": "pt_write", "pid": proc.pid,
                             "status": status})

    def _ev_pt_map_writable(self, ev: dict) -> None:
        proc = self._proc(ev)
        frames = sorted(proc.pt_frames) or [self.sysm.guardian.linear_l2_first]
        upd = PteUpdate(root=proc.pgd, vpn=0x32,
                        entry=pte_pack(frames[0], writable=True, user=True))
        try:
            self.sysm.guardian.set_pts([upd])
            status = "mapped"
        except GuardianDenied as denied:
            status = f"denied: {denied.reason}"
        self.attacks.append({"kind": "pt_map_writable", "pid": proc.pid,
                             "status": status})

    def _ev_forge_elr(self, ev: dict) -> None:
        self._proc(ev).forge_elr = ev["va"]

    def _ev_forge_regs(self, ev: dict) -> None:
        self._proc(ev).forge_regs_seed = ev.get("seed", 1)

    def _ev_forge_storm(self, ev: dict) -> None:
        proc = self._proc(ev)
        proc.forge_budget = ev.get("count", 100)
        proc.forge_rng = random.Random(ev.get("seed", 0))
        proc.forge_vpns = list(ev.get("vpns", []))

    def _ev_iago_mmap(self, ev: dict) -> None:
        self._proc(ev).iago_mmap = True

    def _ev_arm_overreach(self, ev: dict) -> None:
        self._proc(ev).overreach_armed = True


def run_scenario(scenario: dict, name: str = "scenario") -> RunResult:
    sysm = _boot(scenario)
    kern = sysm.kernel
    machine = sysm.machine
    windows = [_blob(w) for w in scenario.get("cleartext_windows") or []]
    engine = _EventEngine(sysm, list(scenario.get("events") or []), windows)
    kern.tick_callback = engine.on_tick
    kern.pending_events_fn = engine.pending
    engine.on_tick(0)                   # tick-zero events precede execution

    max_steps = (scenario.get("limits") or {}).get("max_steps", 400_000)
    steps = 0
    for core in machine.cores:
        kern.try_dispatch(core)
    while steps < max_steps:
        progressed = False
        for core in machine.cores:
            res = machine.step(core)
            if res is StepResult.RAN:
                steps += 1
                progressed = True
            elif res is StepResult.HALTED:
                kern.handle_halt(core)
                progressed = True
            elif kern.try_dispatch(core):
                progressed = True
        if progressed:
            continue
        if not kern.advance_idle_tick():
            break

    sysm.guardian.audit()
    deadlocked = kern.any_blocked() and not kern.any_runnable()
    processes = {}
    for pid, proc in sorted(kern.processes.items()):
        processes[pid] = {"name": proc.name, "sensitive": proc.sensitive,
                          "exit_code": proc.exit_code, "killed": proc.killed,
                          "stdout": bytes(proc.stdout)}
    return RunResult(name=name, steps=steps,
                     metrics=copy.deepcopy(kern.metrics.to_dict()),
                     log_lines=list(sysm.log.lines),
                     snapshots=engine.snapshots,
                     attacks=engine.attacks + kern.attack_log,
                     processes=processes,
                     deadlocked=deadlocked,
                     system=sysm)


# ---------------------------------------------------------------------------
# the fixture corpus

SECRET = "TOP-SECRET-PAYLOAD-0123456789ab"


def _sc(programs, frames=1024, tick=200, cores=1, prefetch=1, events=(),
        files=None, windows=(), max_steps=400_000, audit_every=False,
        **extra) -> dict:
    sc = {"machine": {"frames": frames, "tick": tick, "cores": cores,
                      "prefetch": prefetch},
          "programs": programs,
          "events": list(events),
          "limits": {"max_steps": max_steps},
          "audit_every_entry": audit_every}
    if files:
        sc["files"] = files
    if windows:
        sc["cleartext_windows"] = list(windows)
    sc.update(extra)
    return sc


def corpus() -> dict[str, dict]:
    secret_win = [{"text": SECRET[:16]}]
    both = [
        ("hello_plain", False), ("hello_sealed", True),
    ]
    out = {}
    for nm, sens in both:
        out[nm] = _sc([{"prog": "hello", "sensitive": sens}])

    out["switch_pair_sealed"] = _sc(
        [{"prog": "spin_forever", "sensitive": True},
         {"prog": "spin_forever", "sensitive": True}],
        events=[{"at_tick": 4, "kind": "snapshot"},
                {"at_tick": 24, "kind": "snapshot"}],
        max_steps=12_000)
    out["switch_pair_plain"] = _sc(
        [{"prog": "spin_forever"}, {"prog": "spin_forever"}],
        events=[{"at_tick": 4, "kind": "snapshot"},
                {"at_tick": 24, "kind": "snapshot"}],
        max_steps=12_000)

    out["demand_touch"] = _sc([{"prog": "touch_mmap"}], prefetch=1)
    out["demand_prefetch"] = _sc([{"prog": "touch_mmap"}], prefetch=16)

    out["swap_roundtrip"] = _sc(
        [{"prog": "compute_write", "sensitive": True}],
        events=[{"at_tick": 1, "kind": "snapshot"},
                {"at_tick": 3, "kind": "swap_out", "pid": 1, "va": 0x2000},
                {"at_tick": 5, "kind": "swap_out", "pid": 1, "va": 0x3000,
                 "compress": True}],
        windows=[{"hex": "a5" * 16}])

    out["storm_baseline"] = _sc([{"prog": "compute_write", "sensitive": True}])
    out["relocate_storm"] = _sc(
        [{"prog": "compute_write", "sensitive": True}],
        events=[{"at_tick": 3, "kind": "storm", "pid": 1, "steps": 500,
                 "seed": 11}])

    out["migrate_residency"] = _sc(
        [{"prog": "spin_forever", "sensitive": True}],
        events=[{"at_tick": 2, "kind": "snapshot"},
                {"at_tick": 4, "kind": "migrate", "pid": 1, "count": 1000},
                {"at_tick": 5, "kind": "snapshot"}],
        max_steps=2_000)

    out["semantic_io"] = _sc(
        [{"prog": "semantic_io", "sensitive": True}],
        files={"/in/f.bin": {"text": "SEMANTIC-IO-OK!\n"}})

    out["futex_sync_plain"] = _sc([{"prog": "futex_pair"}])
    out["futex_sync_sealed"] = _sc([{"prog": "futex_pair", "sensitive": True}])
    out["robust_recover"] = _sc([{"prog": "robust_exit", "sensitive": True}])
    out["cleartid_wake"] = _sc([{"prog": "cleartid"}])
    out["cleartid_sealed"] = _sc([{"prog": "cleartid", "sensitive": True}])

    out["signal_frames"] = _sc(
        [{"prog": "signal_prog", "sensitive": True}],
        events=[{"at_tick": 2, "kind": "send_signal", "pid": 1, "signum": 5}])
    out["signal_plain"] = _sc(
        [{"prog": "signal_prog"}],
        events=[{"at_tick": 2, "kind": "send_signal", "pid": 1, "signum": 5}])

    out["ciphertext_view"] = _sc(
        [{"prog": "secret_holder", "sensitive": True}],
        events=[{"at_tick": 1, "kind": "raw_read", "pid": 1, "va": 0x2000,
                 "len": 64},
                {"at_tick": 2, "kind": "encrypt_view", "pid": 1, "va": 0x2000},
                {"at_tick": 3, "kind": "raw_read", "pid": 1, "va": 0x2000,
                 "len": 4096}],
        windows=secret_win, max_steps=2_000, audit_every=True)

    out["swap_tamper"] = _sc(
        [{"prog": "compute_write", "sensitive": True}],
        events=[{"at_tick": 3, "kind": "swap_tamper", "pid": 1, "va": 0x2000,
                 "bit": 777}],
        windows=[{"hex": "a5" * 16}], audit_every=True)

    out["cross_map_attack"] = _sc(
        [{"prog": "secret_holder", "sensitive": True},
         {"prog": "spin_forever"}],
        events=[{"at_tick": 2, "kind": "cross_map", "victim": 1,
                 "attacker": 2, "va": 0x2000}],
        windows=secret_win, max_steps=3_000, audit_every=True)

    out["pt_probe"] = _sc(
        [{"prog": "spin_forever"}],
        events=[{"at_tick": 1, "kind": "pt_write", "pid": 1},
                {"at_tick": 2, "kind": "pt_map_writable", "pid": 1}],
        max_steps=2_000, audit_every=True)

    out["forge_storm"] = _sc(
        [{"prog": "compute_write", "sensitive": True,
          "params": {"loops": 4000}}],
        events=[{"at_tick": 2, "kind": "forge_storm", "pid": 1, "count": 100,
                 "seed": 5, "vpns": [2]}],
        max_steps=80_000, audit_every=True)

    out["iago_mmap"] = _sc(
        [{"prog": "fresh_zero", "sensitive": True}],
        events=[{"at_tick": 0, "kind": "iago_mmap", "pid": 1}],
        max_steps=2_000, audit_every=True)

    out["overreach_probe"] = _sc(
        [{"prog": "write_once", "sensitive": True}],
        events=[{"at_tick": 0, "kind": "arm_overreach", "pid": 1}],
        audit_every=True)

    out["teardown_scrub"] = _sc(
        [{"prog": "secret_holder", "sensitive": True}],
        events=[{"at_tick": 3, "kind": "kill", "pid": 1},
                {"at_tick": 4, "kind": "scan"}],
        windows=secret_win, max_steps=2_000, audit_every=True)

    out["multicore_pair"] = _sc(
        [{"prog": "write_once", "params": {"delay": 2000}},
         {"prog": "write_once", "params": {"delay": 2000}}],
        cores=2, max_steps=30_000)

    out["plain_zero_crypto"] = _sc(
        [{"prog": "getpid_echo"}, {"prog": "brk_prog"},
         {"prog": "fresh_zero"}, {"prog": "bss_touch"}])

    out["heap_paths_sealed"] = _sc(
        [{"prog": "brk_prog", "sensitive": True},
         {"prog": "fresh_zero", "sensitive": True},
         {"prog": "bss_touch", "sensitive": True}])

    out["exhaustive_futex"] = _sc(
        [{"prog": "futex_pair", "sensitive": False}],
        tick=10 ** 8, max_steps=20_000,
        schedule={"exhaustive": True})

    return out


# ---------------------------------------------------------------------------
# exhaustive interleaving explorer

GRAIN_LIMIT = 400


@dataclass
class ScheduleOutcome:
    choices: tuple[int, ...]
    decisions: list[int]
    chosen: list[int]
    stdout: dict[int, bytes]
    blocked: list[int]
    all_exited: bool
    ended: str                      # "quiescent" | "budget"
    fingerprint: str

    @property
    def lost_wakeup(self) -> bool:
        return self.ended == "quiescent" and bool(self.blocked)


@dataclass
class ExploreResult:
    runs: list[ScheduleOutcome]
    violations: list[ScheduleOutcome]


def _all_threads(kern: Kernel):
    out = []
    for pid in sorted(kern.processes):
        out.extend(kern.processes[pid].threads)
    out.sort(key=lambda t: t.tid)
    return out


def _enabled(kern: Kernel, t) -> bool:
    if t.state in (ThreadState.READY, ThreadState.RUNNING):
        return True
    if t.state is ThreadState.INKERNEL:
        return kern.phase_enabled(t)
    return False


def _macro_step(sysm: System, t) -> None:
    """Advance one thread to its next scheduling boundary."""
    kern = sysm.kernel
    machine = sysm.machine
    core = machine.cores[0]
    if t.state is ThreadState.INKERNEL:
        kern.continue_phase(t)
        return
    cur = kern.current.get(0)
    if not (cur is t and core.mode is Mode.USER):
        kern.forced_next = t
        if core.mode is Mode.USER and cur is not None:
            kern.suppress_tick = True
            machine.take_exception(core, ExceptionKind.TIMER_INTERRUPT, 0,
                                   elr=core.pc)
            kern.suppress_tick = False
        else:
            kern.try_dispatch(core)
        kern.forced_next = None
        if not (kern.current.get(0) is t and core.mode is Mode.USER):
            return
    mark = kern.dispatch_count
    for _ in range(GRAIN_LIMIT):
        res = machine.step(core)
        if res is StepResult.HALTED:
            kern.handle_halt(core)
            return
        if res is not StepResult.RAN or kern.dispatch_count != mark:
            return


def run_schedule(scenario: dict, prefix: tuple[int, ...] = (),
                 depth: int = 6, grains: int = 3000) -> ScheduleOutcome:
    sysm = _boot(scenario, exhaustive=True)
    kern = sysm.kernel
    decisions: list[int] = []
    chosen: list[int] = []
    ended = "budget"
    for _ in range(grains):
        enabled = [t for t in _all_threads(kern) if _enabled(kern, t)]
        if not enabled:
            ended = "quiescent"
            break
        if len(enabled) > 1 and len(decisions) < depth:
            want = prefix[len(decisions)] if len(decisions) < len(prefix) else 0
            idx = want % len(enabled)
            decisions.append(len(enabled))
            chosen.append(idx)
            t = enabled[idx]
        else:
            t = enabled[0]
        _macro_step(sysm, t)
    else:
        enabled = [t for t in _all_threads(kern) if _enabled(kern, t)]
        if not enabled:
            ended = "quiescent"

    sysm.guardian.audit()
    blocked = [t.tid for t in _all_threads(kern)
               if t.state is ThreadState.BLOCKED]
    stdout = {pid: bytes(p.stdout) for pid, p in kern.processes.items()}
    basis = json.dumps({"chosen": chosen,
                        "stdout": {k: v.hex() for k, v in stdout.items()},
                        "blocked": blocked}, sort_keys=True)
    return ScheduleOutcome(
        choices=tuple(prefix), decisions=decisions, chosen=chosen,
        stdout=stdout, blocked=blocked, all_exited=kern.all_dead(),
        ended=ended,
        fingerprint=hashlib.sha256(basis.encode()).hexdigest())


def explore(scenario: dict, depth: int = 6,
            max_runs: int = 512) -> ExploreResult:
    """DFS over scheduler choice prefixes, branching at every state with
    two or more enabled threads (up to `depth` decision points)."""
    runs: list[ScheduleOutcome] = []
    stack: list[tuple[int, ...]] = [()]
    while stack and len(runs) < max_runs:
        prefix = stack.pop()
        out = run_schedule(scenario, prefix, depth)
        runs.append(out)
        for pos in range(len(prefix), len(out.decisions)):
            for alt in range(1, out.decisions[pos]):
                stack.append(tuple(out.chosen[:pos]) + (alt,))
    return ExploreResult(runs=runs,
                         violations=[r for r in runs if r.lost_wakeup])
