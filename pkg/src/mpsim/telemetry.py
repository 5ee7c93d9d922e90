"""Run-wide counters and the line-oriented event log.

Log lines are `SEQ kind key=value ...` with a fixed field order per call
site, so identical runs produce byte-identical logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Metrics:
    guardian_entries: dict[str, int] = field(default_factory=dict)
    seal_ops: int = 0
    unseal_ops: int = 0
    denied_moves: int = 0
    denied_vmcr: int = 0
    move_copies: int = 0
    move_bytes: int = 0
    robust_nodes_read: int = 0
    capability_grants: int = 0
    os_suspensions: int = 0
    processes_killed: int = 0
    context_switches: int = 0
    migrations: int = 0
    swaps_out: int = 0
    swaps_in: int = 0
    compressions: int = 0
    ticks: int = 0
    syscalls: int = 0
    signals_delivered: int = 0
    page_faults: dict[str, int] = field(default_factory=lambda: {"user": 0, "os": 0})

    def to_dict(self) -> dict:
        out = {
            "guardian_entries": dict(sorted(self.guardian_entries.items())),
            "page_faults": dict(self.page_faults),
        }
        for name in ("seal_ops", "unseal_ops", "denied_moves", "denied_vmcr",
                     "move_copies", "move_bytes", "robust_nodes_read",
                     "capability_grants", "os_suspensions", "processes_killed",
                     "context_switches", "migrations", "swaps_out", "swaps_in",
                     "compressions", "ticks", "syscalls", "signals_delivered"):
            out[name] = getattr(self, name)
        return out


class EventLog:
    def __init__(self):
        self.lines: list[str] = []
        self._seq = 0

    def write(self, kind: str, **fields) -> None:
        parts = [f"{k}={v}" for k, v in fields.items()]
        self.lines.append(" ".join([str(self._seq), kind] + parts))
        self._seq += 1

    def dump(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")

    def tail(self, n: int = 20) -> list[str]:
        return self.lines[-n:]
