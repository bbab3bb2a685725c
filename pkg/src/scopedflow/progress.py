"""EOS-based hierarchical progress tracking.

Completion detection works at three levels:

* Per operator: an operator completes for its tag once an end-of-stream (EOS)
  marker has arrived on every one of its incoming channels; it then fires
  OnCompletion exactly once and emits one EOS per outgoing channel.

* Per branch scope: each parallel ingress operator allocates strided instance
  ordinals; at its own completion it reports (index, local count) to the
  egress side, which reconstructs the exact expected ordinal set and declares
  the scope done when every expected instance has completed or been
  terminated.

* Per loop scope: ingress operators close each iteration when its backward
  channels have all delivered EOS.  Closures are exchanged between ingress
  peers; an iteration that was empty at *every* ingress is the last one, and
  every ingress then reports that ordinal to the egress side (which requires
  the same ordinal from all ingress operators before trusting it).  A
  non-empty closure releases EOS into the next iteration instead.  The
  peer exchange prevents both the deadlock where one ingress saw data for an
  iteration that another ingress never learns about, and the unbounded EOS
  echo a lone ingress would otherwise push around the (conceptually acyclic)
  instantiated loop forever.

All state here is plain data owned by one operator; no locking is required.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import EngineFault

# Actions returned by on_eos.
EOS_NONE = "none"
EOS_FIRE_COMPLETION = "fire_completion"
EOS_FIRE_AND_PROPAGATE = "fire_and_propagate"

Channel = tuple  # (edge_id, upstream operator index)


class OperatorEosLedger:
    """Tracks EOS coverage of one operator's incoming channels (for one tag)."""

    def __init__(self, expected_channels):
        self.expected: dict[Channel, None] = {c: None for c in expected_channels}
        self.seen: set[Channel] = set()
        self.completed = False

    @property
    def remaining(self) -> int:
        return len(self.expected) - len(self.seen)

    def record(self, channel: Channel) -> bool:
        """Record one EOS; True when this was the last missing channel."""
        if channel not in self.expected:
            raise EngineFault(f"EOS on unexpected channel {channel!r}")
        if channel in self.seen:
            raise EngineFault(f"duplicate EOS on channel {channel!r}")
        self.seen.add(channel)
        return len(self.seen) == len(self.expected)


def on_eos(ledger: OperatorEosLedger, channel: Channel, has_outputs: bool) -> str:
    """Apply one EOS arrival; says whether completion fires and propagates."""
    if not ledger.record(channel):
        return EOS_NONE
    ledger.completed = True
    return EOS_FIRE_AND_PROPAGATE if has_outputs else EOS_FIRE_COMPLETION


@dataclass(frozen=True)
class SiCountReport:
    """Completion report an ingress operator broadcasts to egress operators."""

    scope_id: str
    ingress_index: int
    kind: str  # "branch_count" or "loop_empty"
    value: int  # local instance count (branch) or empty-iteration ordinal (loop)


def strided_ordinals(index: int, stride: int, count: int) -> list[int]:
    """Ordinals allocated by ingress `index` of `stride` peers after `count` spawns."""
    return [index + 1 + j * stride for j in range(count)]


class BranchEgressTracker:
    """Egress-side accounting for one branch scope under one parent tag."""

    def __init__(self, scope_id: str, ingress_count: int):
        self.scope_id = scope_id
        self.ingress_count = ingress_count
        self.reports: dict[int, int] = {}
        self.completed: set[int] = set()

    def record_report(self, report: SiCountReport) -> None:
        if report.ingress_index < 0 or report.ingress_index >= self.ingress_count:
            raise EngineFault(
                f"report from unknown ingress index {report.ingress_index} "
                f"for scope {self.scope_id}")
        if report.kind != "branch_count":
            raise EngineFault(f"wrong report kind {report.kind!r} for branch scope")
        self.reports[report.ingress_index] = report.value

    def record_si_complete(self, ordinal: int) -> None:
        self.completed.add(ordinal)

    @property
    def all_reports_in(self) -> bool:
        return len(self.reports) == self.ingress_count

    def expected_sis(self) -> Optional[list[int]]:
        """Exact expected ordinal set, or None until every ingress reported."""
        if not self.all_reports_in:
            return None
        out: list[int] = []
        for index in range(self.ingress_count):
            out.extend(strided_ordinals(index, self.ingress_count, self.reports[index]))
        return sorted(out)

    def scope_complete(self) -> bool:
        expected = self.expected_sis()
        return expected is not None and all(s in self.completed for s in expected)


class LoopIngressTracker:
    """Ingress-side iteration accounting for one loop scope under one parent tag.

    Iteration 0 stands for the entering stream.  ``local_close`` records that
    this ingress saw EOS on all channels feeding iteration k; ``peer_close``
    records closure gossip from ingress peers (including this one).  Once all
    peers closed iteration k the returned action is either ``("advance",
    k + 1)`` - someone forwarded data, release EOS into the next iteration -
    or ``("last", k)`` - nobody did, report k as the final ordinal.
    """

    def __init__(self, scope_id: str, index: int, peer_count: int):
        self.scope_id = scope_id
        self.index = index
        self.peer_count = peer_count
        self.data_seen: set[int] = set()
        self.locally_closed: set[int] = set()
        self.peer_closed: dict[int, set[int]] = {}
        self.peer_nonempty: dict[int, bool] = {}
        self.resolved: set[int] = set()

    def record_data(self, iteration: int) -> None:
        self.data_seen.add(iteration)

    def local_close(self, iteration: int) -> dict:
        """Close iteration `iteration` locally; returns the gossip payload this
        ingress must broadcast to all ingress peers."""
        if iteration in self.locally_closed:
            raise EngineFault(
                f"iteration {iteration} closed twice at ingress {self.index}")
        self.locally_closed.add(iteration)
        return {
            "scope_id": self.scope_id,
            "index": self.index,
            "iteration": iteration,
            "empty": iteration not in self.data_seen,
        }

    def peer_close(self, peer_index: int, iteration: int, empty: bool) -> Optional[tuple]:
        closed = self.peer_closed.setdefault(iteration, set())
        if peer_index in closed:
            raise EngineFault(
                f"duplicate iteration-close gossip from peer {peer_index}")
        closed.add(peer_index)
        if not empty:
            self.peer_nonempty[iteration] = True
        if len(closed) < self.peer_count or iteration in self.resolved:
            return None
        self.resolved.add(iteration)
        if self.peer_nonempty.get(iteration, False):
            return ("advance", iteration + 1)
        return ("last", iteration)


class LoopEgressTracker:
    """Egress-side accounting for one loop scope under one parent tag."""

    def __init__(self, scope_id: str, ingress_count: int):
        self.scope_id = scope_id
        self.ingress_count = ingress_count
        self.reported: dict[int, set[int]] = {}  # ordinal -> ingress indices
        self.completed: set[int] = set()
        self.final_count: Optional[int] = None

    def record_report(self, report: SiCountReport) -> None:
        if report.ingress_index < 0 or report.ingress_index >= self.ingress_count:
            raise EngineFault(
                f"report from unknown ingress index {report.ingress_index} "
                f"for scope {self.scope_id}")
        if report.kind != "loop_empty":
            raise EngineFault(f"wrong report kind {report.kind!r} for loop scope")
        voters = self.reported.setdefault(report.value, set())
        voters.add(report.ingress_index)
        if len(voters) == self.ingress_count and self.final_count is None:
            self.final_count = report.value

    def record_si_complete(self, ordinal: int) -> None:
        self.completed.add(ordinal)

    def expected_sis(self) -> Optional[list[int]]:
        if self.final_count is None:
            return None
        return list(range(1, self.final_count + 1))

    def scope_complete(self) -> bool:
        expected = self.expected_sis()
        return expected is not None and all(s in self.completed for s in expected)


# Spec-facing aliases: the branch/loop progress decisions are embodied by the
# tracker classes above; these helpers evaluate one decision functionally.

def branch_scope_progress(tracker: BranchEgressTracker) -> dict:
    """Current branch-scope decision: expected instance set and completion."""
    return {
        "expected": tracker.expected_sis(),
        "complete": tracker.scope_complete(),
    }


def loop_scope_progress(tracker: LoopEgressTracker) -> dict:
    """Current loop-scope decision: detected iteration count and completion."""
    return {
        "count": tracker.final_count,
        "expected": tracker.expected_sis(),
        "complete": tracker.scope_complete(),
    }
