"""scopedflow: a single-process scoped-dataflow graph query engine.

Dataflow subgraphs ("scopes") replicate at runtime into isolated, individually
schedulable and cancelable instances; executors schedule operator trees
hierarchically under quota budgets; progress tracking is EOS-based; the graph
lives in memory partitioned into migratable tablets.
"""

from .dataflow import (BRANCH, LOOP, EdgeDecl, IngressState, LogicalDataflow,
                       RouteResult, ScopeDecl, ValidationReport, VertexDecl,
                       ingress_route, validate_dataflow)
from .errors import (EngineFault, GraphLoadError, ModelViolation, QueryError,
                     RoutingFault, ScopedFlowError)
from .graph import (GraphSchema, PropertyGraph, RoutingTable, Tablet, load_csv,
                    partition)
from .policies import DEFAULT_REGISTRY, PolicyRegistry, schedule_compare
from .tags import A_FIRST, B_FIRST, EMPTY_TAG, EQUAL, ScopeTag, egress_strip

__version__ = "0.1.0"

__all__ = [
    "ScopeTag", "EMPTY_TAG", "egress_strip", "A_FIRST", "B_FIRST", "EQUAL",
    "LogicalDataflow", "VertexDecl", "EdgeDecl", "ScopeDecl", "BRANCH", "LOOP",
    "ValidationReport", "validate_dataflow", "IngressState", "ingress_route",
    "RouteResult", "PolicyRegistry", "DEFAULT_REGISTRY", "schedule_compare",
    "PropertyGraph", "GraphSchema", "Tablet", "RoutingTable", "load_csv",
    "partition", "ScopedFlowError", "ModelViolation", "EngineFault",
    "GraphLoadError", "RoutingFault", "QueryError",
]
