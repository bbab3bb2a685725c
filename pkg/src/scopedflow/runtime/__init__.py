from .engine import Engine, EngineConfig, Query
from .executor import Executor, QueryRuntime, WorkReport, assign_quota
from .messages import (BUFFERED, CONSUMED, CREATED_AND_DELIVERED, DATA,
                       DELIVERED, DROPPED_TOMBSTONE, EMITTED_ON_BEHALF, EOS,
                       SYS, Item, Message, OperatorAddress)
from .operators import ScopeOperator, VertexOperator
from .plan import PhysicalOp, PhysicalPlan

__all__ = [
    "Engine", "EngineConfig", "Query", "Executor", "QueryRuntime",
    "WorkReport", "assign_quota", "Item", "Message", "OperatorAddress",
    "ScopeOperator", "VertexOperator", "PhysicalOp", "PhysicalPlan",
    "DATA", "EOS", "SYS", "DELIVERED", "CREATED_AND_DELIVERED",
    "DROPPED_TOMBSTONE", "BUFFERED", "ENQUEUED", "EMITTED_ON_BEHALF",
    "CONSUMED",
]

from .messages import ENQUEUED  # noqa: E402  (re-export)
