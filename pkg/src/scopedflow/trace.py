"""Execution tracing and run statistics.

Trace lines follow ``tick, exec_id, address, event`` with optional key=value
details; tests use them for scheduling-order and lifecycle audits.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

LEVEL_OFF = 0
LEVEL_EVENTS = 1


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    exec_id: int
    address: str
    event: str
    detail: tuple = ()

    def line(self) -> str:
        extra = "".join(f" {k}={v}" for k, v in self.detail)
        return f"{self.tick}, {self.exec_id}, {self.address}, {self.event}{extra}"


class Tracer:
    def __init__(self, level: int = LEVEL_OFF):
        self.level = level
        self.events: list[TraceEvent] = []
        self.faults: list[str] = []
        self._lock = threading.Lock()

    def record(self, tick: int, exec_id: int, address, event: str, **detail) -> None:
        if self.level < LEVEL_EVENTS:
            return
        ev = TraceEvent(tick, exec_id, str(address), event,
                        tuple(sorted(detail.items())))
        with self._lock:
            self.events.append(ev)

    def fault(self, message: str) -> None:
        with self._lock:
            self.faults.append(message)

    def of_kind(self, event: str) -> list[TraceEvent]:
        return [e for e in self.events if e.event == event]

    def dump(self) -> str:
        return "\n".join(e.line() for e in self.events)


class RunStats:
    """Per-query counters; deterministic content for fixed seeds."""

    def __init__(self):
        self.counters: dict[str, int] = {}
        self.groups: dict[str, int] = {}

    def bump(self, name: str, amount: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + amount

    def bump_group(self, group: str, amount: int = 1) -> None:
        self.groups[group] = self.groups.get(group, 0) + amount

    def get(self, name: str) -> int:
        return self.counters.get(name, 0)

    def as_dict(self) -> dict:
        out = dict(sorted(self.counters.items()))
        if self.groups:
            out["groups"] = dict(sorted(self.groups.items()))
        return out


def audit_trace(tracer: Tracer) -> list[str]:
    """Lifecycle audit over a full trace: completion fires at most once per
    address, and nothing is processed at an address after its instance was
    terminated."""
    problems: list[str] = []
    completed: set[str] = set()
    terminated_prefixes: list[str] = []
    for ev in tracer.events:
        if ev.event == "COMPLETE":
            if ev.address in completed:
                problems.append(f"double completion at {ev.address}")
            completed.add(ev.address)
        elif ev.event == "TERMINATE_SI":
            prefix = ev.address.split(":*")[0]
            terminated_prefixes.append(f"{prefix}")
        elif ev.event == "PROC":
            for prefix in terminated_prefixes:
                if ev.address.startswith(prefix):
                    problems.append(
                        f"processing at {ev.address} after termination of {prefix}")
    problems.extend(f"engine fault: {f}" for f in tracer.faults)
    return problems
