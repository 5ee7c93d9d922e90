"""Deterministic simulator of monitor-mediated memory protection:
an untrusted kernel manages pages it can never read in cleartext."""

from .adapter import AdapterError, adapt, verify_adapted
from .harness import (
    DEFAULT_WEIGHTS,
    RunResult,
    corpus,
    cycle_report,
    explore,
    run_scenario,
    run_schedule,
)
from .sealing import TagMismatch, keygen
from .system import build_system

__all__ = [
    "AdapterError",
    "DEFAULT_WEIGHTS",
    "RunResult",
    "TagMismatch",
    "adapt",
    "build_system",
    "corpus",
    "cycle_report",
    "explore",
    "keygen",
    "run_scenario",
    "run_schedule",
    "verify_adapted",
]
