"""Wire types passed between operators and executors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from ..tags import ScopeTag

DATA = "data"
EOS = "eos"
SYS = "sys"

# Outcomes of a delivery attempt.
DELIVERED = "delivered"
CREATED_AND_DELIVERED = "created_and_delivered"
DROPPED_TOMBSTONE = "dropped_tombstone"
BUFFERED = "buffered"
ENQUEUED = "enqueued"
EMITTED_ON_BEHALF = "emitted_on_behalf"
CONSUMED = "consumed"  # handled eagerly by scope boundary machinery


@dataclass(frozen=True)
class Item:
    """Payload of a data message: the current graph element plus carried
    context (e.g. the outer element a subquery check belongs to)."""

    element: Any = None
    carry: tuple = ()
    # Scopes-off metadata: traversal id and iteration ordinal.
    tid: Any = None
    it: int = 0
    # Scopes-off loop barrier marker: when set, this is a control item.
    barrier: Optional[int] = None

    def with_element(self, element) -> "Item":
        return Item(element, self.carry, self.tid, self.it, self.barrier)


@dataclass
class Message:
    kind: str
    qid: int
    dest_key: tuple  # (vertex_id, part)
    tag: ScopeTag
    edge_id: Optional[str] = None
    channel: Optional[tuple] = None  # (edge_id, src op global index)
    item: Optional[Item] = None
    sys: Optional[dict] = None


@dataclass(frozen=True)
class OperatorAddress:
    """Path from an executor through the scope-operator chain to an operator.

    The projection of the chain onto its instance ordinals is exactly the
    operator's scope tag.
    """

    exec_id: int
    chain: tuple  # ((scope_id, si_ordinal), ...)
    op_id: Optional[str] = None  # None addresses the scope operator itself

    @property
    def tag(self) -> ScopeTag:
        return ScopeTag(si for _, si in self.chain)

    def is_prefix_of(self, other: "OperatorAddress") -> bool:
        if self.exec_id != other.exec_id or self.op_id is not None:
            return False
        return other.chain[: len(self.chain)] == self.chain

    def encode(self) -> str:
        path = "/".join(f"{sid}.{si}" for sid, si in self.chain)
        leaf = self.op_id if self.op_id is not None else "*"
        return f"{self.exec_id}:{path}:{leaf}"

    def __str__(self) -> str:
        return self.encode()
