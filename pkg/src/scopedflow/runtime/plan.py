"""Physical plans: per-tablet/per-executor operator sets and channel routing.

A logical vertex becomes a set of physical operators:

* graph-accessing vertices get one operator per tablet, placed on the
  executor owning that tablet (reads stay local);
* stateful pure vertices get a single operator;
* stateless pure vertices get one operator per participating executor;
* scope ingress/egress vertices get one operator per executor hosting any
  operator of their scope.

Each edge routes data by its partition function and disseminates EOS to the
exact set of operators that could have received data from a given sender, so
completion accounting stays tight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..dataflow import (BRANCH, GRAPH_ACCESSING, LOOP, PART_BY_SI, PART_HASH,
                        PART_LOCAL, PART_SINGLE, ROLE_EGRESS, ROLE_EXTERNAL,
                        ROLE_INGRESS, LogicalDataflow)
from ..errors import EngineFault
from ..graph import RoutingTable, vertex_hash
from ..tags import ScopeTag

MODE_TABLET = "tablet"
MODE_SINGLE = "single"
MODE_PER_EXEC = "per_exec"
MODE_BOUNDARY = "boundary"
MODE_BY_SI = "by_si"


@dataclass(frozen=True)
class PhysicalOp:
    key: tuple  # (vertex_id, part)
    vertex_id: str
    part: int
    exec_id: int
    gidx: int  # plan-unique channel index
    tablet_id: Optional[int] = None


class PhysicalPlan:
    """Operator placement plus routing/channel lookups for one dataflow."""

    def __init__(self, df: LogicalDataflow, routing: RoutingTable,
                 num_executors: int, pure_parallelism: int = 0):
        self.df = df
        self.routing = routing
        self.num_executors = num_executors
        self.pure_parallelism = pure_parallelism or num_executors
        self.ops_of: dict[str, list[PhysicalOp]] = {}
        self.op_by_key: dict[tuple, PhysicalOp] = {}
        self.vertex_mode: dict[str, str] = {}
        self.scope_execs: dict[str, list[int]] = {}
        self._next_gidx = 0
        self._build()

    # ------------------------------------------------------------------

    def _add_op(self, vertex_id: str, part: int, exec_id: int,
                tablet_id: Optional[int] = None) -> PhysicalOp:
        op = PhysicalOp((vertex_id, part), vertex_id, part, exec_id,
                        self._next_gidx, tablet_id)
        self._next_gidx += 1
        self.ops_of.setdefault(vertex_id, []).append(op)
        self.op_by_key[op.key] = op
        return op

    def _build(self) -> None:
        df = self.df
        execs = list(range(self.num_executors))
        # Place internal (non-boundary) vertices first.
        boundary = {}
        for scope in df.scopes.values():
            boundary[scope.ingress_vertex_id] = (scope.scope_id, ROLE_INGRESS)
            boundary[scope.egress_vertex_id] = (scope.scope_id, ROLE_EGRESS)
        for vid, decl in df.vertices.items():
            if vid in boundary or decl.role == ROLE_EXTERNAL:
                continue
            if decl.access == GRAPH_ACCESSING:
                self.vertex_mode[vid] = MODE_TABLET
                for t in range(self.routing.num_tablets):
                    self._add_op(vid, t, self.routing.owner_of_tablet(t), t)
            elif decl.stateful:
                self.vertex_mode[vid] = MODE_BY_SI if self._is_per_instance(vid) else MODE_SINGLE
                if self.vertex_mode[vid] == MODE_SINGLE:
                    self._add_op(vid, 0, 0)
                else:
                    for i, e in enumerate(execs):
                        self._add_op(vid, i, e)
            else:
                self.vertex_mode[vid] = MODE_PER_EXEC
                for i, e in enumerate(execs[: self.pure_parallelism]):
                    self._add_op(vid, i, e)
        # Scope hosting: executors with any internal operator, bottom-up.
        for scope in sorted(df.scopes.values(), key=lambda s: -s.depth):
            hosting: dict[int, None] = {}
            for vid in df.vertices:
                if df.vertex_region.get(vid) == scope.scope_id and vid in self.ops_of:
                    for op in self.ops_of[vid]:
                        hosting[op.exec_id] = None
            for inner in df.scopes.values():
                if inner.parent_scope_id == scope.scope_id:
                    for e in self.scope_execs[inner.scope_id]:
                        hosting[e] = None
            if not hosting:
                hosting[0] = None
            self.scope_execs[scope.scope_id] = sorted(hosting)
        # Boundary operators: one per hosting executor.
        for scope in df.scopes.values():
            for vid in (scope.ingress_vertex_id, scope.egress_vertex_id):
                self.vertex_mode[vid] = MODE_BOUNDARY
                for part, e in enumerate(self.scope_execs[scope.scope_id]):
                    self._add_op(vid, part, e)

    def _is_per_instance(self, vertex_id: str) -> bool:
        """Stateful pure vertices inside a scope keep per-instance state and are
        partitioned by instance ordinal; top-level ones stay singletons."""
        region = self.df.vertex_region.get(vertex_id)
        if region is None:
            return False
        scope = self.df.scopes[region]
        # Top-level (root) scopes have a single instance per query: a singleton
        # operator is equivalent and cheaper.
        return scope.depth > 1

    # ------------------------------------------------------------------
    # routing

    def designated(self, vertex_id: str, si: int) -> PhysicalOp:
        ops = self.ops_of[vertex_id]
        return ops[(si - 1) % len(ops)]

    def route_data(self, edge_id: str, src_op: Optional[PhysicalOp],
                   item_element, tag: ScopeTag) -> PhysicalOp:
        edge = self.df.edges[edge_id]
        ops = self.ops_of[edge.dst]
        mode = self.vertex_mode[edge.dst]
        if mode == MODE_TABLET:
            return self._tablet_op(edge.dst, item_element)
        if mode == MODE_BY_SI:
            if tag.depth == 0:
                raise EngineFault(f"by-instance vertex {edge.dst} reached with empty tag")
            return self.designated(edge.dst, tag[-1])
        if mode == MODE_SINGLE:
            return ops[0]
        if mode == MODE_BOUNDARY:
            scope = self.df.scopes[self._scope_of_boundary(edge.dst)]
            if edge.dst == scope.egress_vertex_id:
                return self._local_or_first(ops, src_op)
            return self._boundary_target(edge, item_element)
        # per-exec stateless: keep local when possible, else hash.
        if edge.partition == PART_HASH or src_op is None:
            return ops[vertex_hash(_hash_key(item_element), self.routing.seed) % len(ops)]
        return self._local_or_hash(ops, src_op, item_element)

    def _local_or_first(self, ops, src_op) -> PhysicalOp:
        if src_op is not None:
            for op in ops:
                if op.exec_id == src_op.exec_id:
                    return op
        return ops[0]

    def _local_or_hash(self, ops, src_op, element) -> PhysicalOp:
        for op in ops:
            if op.exec_id == src_op.exec_id:
                return op
        return ops[vertex_hash(_hash_key(element), self.routing.seed) % len(ops)]

    def _tablet_op(self, vertex_id: str, element) -> PhysicalOp:
        tablet = self.routing.tablet_of(element)
        op = self.op_by_key[(vertex_id, tablet)]
        return op

    def _boundary_target(self, edge, element) -> PhysicalOp:
        """Entering/backward messages go to the ingress operator co-located
        with where the continued hop will land, when that is predictable."""
        ops = self.ops_of[edge.dst]
        scope_id = self._scope_of_boundary(edge.dst)
        cont = self.df.ingress_forwarding.get(scope_id, {}).get(edge.edge_id)
        if cont is not None:
            inner_dst = self.df.edges[cont].dst
            if self.vertex_mode.get(inner_dst) == MODE_TABLET and element is not None:
                target_exec = self.routing.executor_of(element)
                for op in ops:
                    if op.exec_id == target_exec:
                        return op
        return ops[vertex_hash(_hash_key(element), self.routing.seed) % len(ops)]

    def _scope_of_boundary(self, vertex_id: str) -> str:
        for scope in self.df.scopes.values():
            if vertex_id in (scope.ingress_vertex_id, scope.egress_vertex_id):
                return scope.scope_id
        raise EngineFault(f"{vertex_id} is not a scope boundary vertex")

    def eos_dests(self, edge_id: str, src_op: PhysicalOp,
                  tag: ScopeTag) -> list[PhysicalOp]:
        """Operators that must receive this sender's EOS for `tag` on `edge`."""
        edge = self.df.edges[edge_id]
        ops = self.ops_of[edge.dst]
        mode = self.vertex_mode[edge.dst]
        if mode in (MODE_TABLET,):
            return ops
        if mode == MODE_SINGLE:
            return [ops[0]]
        if mode == MODE_BY_SI:
            if tag.depth == 0:
                raise EngineFault(f"by-instance vertex {edge.dst} reached with empty tag")
            return [self.designated(edge.dst, tag[-1])]
        if mode == MODE_BOUNDARY:
            scope_id = self._scope_of_boundary(edge.dst)
            scope = self.df.scopes[scope_id]
            if edge.dst == scope.egress_vertex_id:
                # Egress intake is forward-local: only the co-located operator.
                local = [op for op in ops if op.exec_id == src_op.exec_id]
                return local if local else [ops[0]]
            return ops  # ingress operators all track the entering stream
        # per-exec stateless
        if edge.partition == PART_HASH:
            return ops
        local = [op for op in ops if op.exec_id == src_op.exec_id]
        return local if local else ops

    def expected_channels(self, vertex_id: str, part: int,
                          tag: ScopeTag) -> list[tuple]:
        """Incoming (edge, sender) channels whose EOS this operator must see."""
        me = self.op_by_key[(vertex_id, part)]
        channels: list[tuple] = []
        for edge in self.df.in_edges(vertex_id):
            if edge.backward:
                continue  # backward channels are tracked per iteration by ingress state
            srcs = self._eos_sources(edge, me, tag)
            channels.extend((edge.edge_id, u.gidx) for u in srcs)
        return channels

    def _eos_sources(self, edge, me: PhysicalOp, tag: ScopeTag) -> list[PhysicalOp]:
        src_ops = self.ops_of.get(edge.src, [])
        # Continuation edges out of a branch ingress carry per-instance EOS
        # emitted only by the ingress operator that spawned the ordinal.
        src_mode = self.vertex_mode.get(edge.src)
        if src_mode == MODE_BOUNDARY:
            scope_id = self._scope_of_boundary(edge.src)
            scope = self.df.scopes[scope_id]
            if edge.src == scope.ingress_vertex_id and scope.kind == BRANCH \
                    and tag.depth == scope.depth:
                spawner = src_ops[(tag[-1] - 1) % len(src_ops)]
                return [spawner]
        return [u for u in src_ops if me in self.eos_dests(edge.edge_id, u, tag)]

    # ------------------------------------------------------------------

    def ingress_ops(self, scope_id: str) -> list[PhysicalOp]:
        return self.ops_of[self.df.scopes[scope_id].ingress_vertex_id]

    def egress_ops(self, scope_id: str) -> list[PhysicalOp]:
        return self.ops_of[self.df.scopes[scope_id].egress_vertex_id]

    def local_internal_keys(self, scope_id: str, exec_id: int,
                            si: int) -> list[tuple]:
        """Child keys a fully-played instance would occupy on one executor:
        local internal leaf operators plus directly-nested scopes hosted here."""
        df = self.df
        keys: list[tuple] = []
        for vid in df.vertices:
            if df.vertex_region.get(vid) != scope_id:
                continue
            mode = self.vertex_mode.get(vid)
            if mode is None:
                continue
            if mode == MODE_BY_SI:
                op = self.designated(vid, si)
                if op.exec_id == exec_id:
                    keys.append(op.key)
            else:
                keys.extend(op.key for op in self.ops_of[vid]
                            if op.exec_id == exec_id)
        for inner in df.scopes.values():
            if inner.parent_scope_id == scope_id and \
                    exec_id in self.scope_execs[inner.scope_id]:
                keys.append(("scope", inner.scope_id))
        return keys

    def describe(self) -> dict:
        return {
            "operators": {v: len(ops) for v, ops in self.ops_of.items()},
            "modes": dict(self.vertex_mode),
            "scope_execs": {s: list(e) for s, e in self.scope_execs.items()},
        }


def _hash_key(element) -> tuple:
    if isinstance(element, tuple) and len(element) == 2:
        return element
    return ("_", element)
