"""Executors: single logical threads of control owning operator forests.

An executor never blocks: each quantum it drains its inbound mailbox
(delivering messages, which may eagerly run scope-boundary bookkeeping),
splits its quota budget equally across runnable root queries, and for each
query repeatedly descends the operator tree to the highest-priority runnable
leaf, processing one message per quota unit so priorities are re-evaluated at
message granularity.  Outbound cross-executor messages are batched per
destination and flushed at batch-size or quantum end.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from ..dataflow import GRAPH_ACCESSING, LOOP
from ..errors import EngineFault
from ..tags import ScopeTag
from .messages import (BUFFERED, CONSUMED, CREATED_AND_DELIVERED, DATA,
                       DELIVERED, DROPPED_TOMBSTONE, EMITTED_ON_BEHALF, EOS,
                       SYS, Item, Message)
from .operators import ScopeOperator, VertexOperator


def assign_quota(budget: int, runnable_roots: list) -> list[int]:
    """Equal shares across runnable roots; the remainder goes to the earliest
    created.  Inside a scope no splitting happens: the full remaining budget
    is offered to the highest-priority child, re-evaluated after each unit."""
    n = len(runnable_roots)
    if n == 0:
        return []
    base, extra = divmod(budget, n)
    return [base + (1 if i < extra else 0) for i in range(n)]


@dataclass
class WorkReport:
    executor: int
    tick_start: int
    tick_end: int = 0
    processed: dict = field(default_factory=dict)  # address str -> count
    per_query: dict = field(default_factory=dict)  # qid -> units spent

    @property
    def total(self) -> int:
        return sum(self.per_query.values())


class QueryRuntime:
    """Per-(executor, query) context the operator tree runs against."""

    def __init__(self, executor: "Executor", query):
        self.executor = executor
        self.engine = executor.engine
        self.exec_id = executor.exec_id
        self.query = query
        self.qid = query.qid
        self.plan = query.plan
        self.df = query.plan.df
        self.registry = query.registry
        self.params = query.params
        self.shared = query.shared
        self.cancel_set = query.cancel_set
        self.sops: dict[tuple, ScopeOperator] = {}
        self.closed_sops: set[tuple] = set()
        self.root_sop: Optional[ScopeOperator] = None
        self._stamp = 0
        self._intra_cache: dict[str, object] = {}

    # -- scheduling hooks ------------------------------------------------

    def next_stamp(self) -> int:
        self._stamp += 1
        return self._stamp

    def root_became_runnable(self) -> None:
        pass  # the executor scans root runnability directly

    def intra_comparator(self, scope_id: str):
        cmp = self._intra_cache.get(scope_id)
        if cmp is None:
            scope = self.df.scopes[scope_id]
            cmp = self.registry.intra_si(scope.intra_si_policy, self.df, scope_id)
            self._intra_cache[scope_id] = cmp
        return cmp

    def max_si_for(self, scope) -> Optional[int]:
        override = self.query.max_si_overrides.get(scope.scope_id)
        return override if override is not None else scope.max_si

    # -- scope operator registry ------------------------------------------

    def get_sop(self, scope_id: str, base_tag: ScopeTag,
                create: bool = True) -> Optional[ScopeOperator]:
        key = (scope_id, base_tag.elements)
        sop = self.sops.get(key)
        if sop is not None:
            return sop
        if not create or key in self.closed_sops:
            return None
        scope = self.df.scopes[scope_id]
        parent = None
        if scope.parent_scope_id is not None:
            parent = self.get_sop(scope.parent_scope_id, base_tag.stripped())
            if parent is None:
                return None
            if base_tag[-1] in parent.tombstones:
                return None
            if not parent.register_si(base_tag[-1], admitted=False):
                return None
        sop = ScopeOperator(self, scope, base_tag, parent)
        self.sops[key] = sop
        if parent is not None:
            parent.directory.setdefault(base_tag[-1], {})[
                ("scope", scope_id)] = sop
        else:
            self.root_sop = sop
        return sop

    def unregister_sop(self, sop: ScopeOperator) -> None:
        key = (sop.scope.scope_id, sop.base_tag.elements)
        self.sops.pop(key, None)
        self.closed_sops.add(key)
        if sop.parent is not None:
            group = sop.parent.directory.get(sop.si)
            if group is not None:
                group.pop(("scope", sop.scope.scope_id), None)

    # -- sending -----------------------------------------------------------

    def send_data(self, edge_id: str, src_op, item: Item, tag: ScopeTag) -> None:
        dest = self.plan.route_data(edge_id, src_op, item.element, tag)
        msg = Message(DATA, self.qid, dest.key, tag, edge_id,
                      (edge_id, src_op.gidx), item)
        self.executor.dispatch(msg, dest.exec_id)

    def send_eos(self, edge_id: str, src_op, tag: ScopeTag) -> None:
        for dest in self.plan.eos_dests(edge_id, src_op, tag):
            msg = Message(EOS, self.qid, dest.key, tag, edge_id,
                          (edge_id, src_op.gidx))
            self.executor.dispatch(msg, dest.exec_id)

    def send_barrier(self, edge_id: str, src_op, item: Item, tag: ScopeTag) -> None:
        # Barriers follow EOS dissemination so alignment sets match ledgers.
        for dest in self.plan.eos_dests(edge_id, src_op, tag):
            msg = Message(DATA, self.qid, dest.key, tag, edge_id,
                          (edge_id, src_op.gidx), item)
            self.executor.dispatch(msg, dest.exec_id)

    def send_report(self, scope, base_tag: ScopeTag, report) -> None:
        for dest in self.plan.egress_ops(scope.scope_id):
            msg = Message(SYS, self.qid, dest.key, base_tag,
                          sys={"kind": "si_report", "report": report,
                               "scope": scope.scope_id})
            self.executor.dispatch(msg, dest.exec_id)

    def send_iter_close(self, scope, base_tag: ScopeTag, gossip: dict) -> None:
        for dest in self.plan.ingress_ops(scope.scope_id):
            msg = Message(SYS, self.qid, dest.key, base_tag,
                          sys={"kind": "iter_close", **gossip})
            self.executor.dispatch(msg, dest.exec_id)

    def send_si_meta(self, scope, base_tag: ScopeTag, si: int, item: Item) -> None:
        collector = scope_collector_vertex(self.df, scope)
        if collector is None:
            dest = self.plan.egress_ops(scope.scope_id)[0]
        else:
            target = self.plan.designated(collector, si)
            dest = next(op for op in self.plan.egress_ops(scope.scope_id)
                        if op.exec_id == target.exec_id)
        msg = Message(SYS, self.qid, dest.key, base_tag,
                      sys={"kind": "si_meta", "si": si, "item": item,
                           "scope": scope.scope_id})
        self.executor.dispatch(msg, dest.exec_id)

    def requeue_buffered(self, leaf, buffered: list) -> None:
        """Buffered EOS re-enter the flow behind the creating data message."""
        for msg in buffered:
            self.engine.inflight.inc()
            leaf.enqueue(msg)

    def broadcast_terminate(self, scope_id: str, base_tag: ScopeTag, si: int) -> None:
        scope = self.df.scopes[scope_id]
        for part, exec_id in enumerate(self.plan.scope_execs[scope_id]):
            if exec_id == self.exec_id:
                continue
            dest_key = (scope.ingress_vertex_id, part)
            msg = Message(SYS, self.qid, dest_key, base_tag,
                          sys={"kind": "terminate_si", "si": si,
                               "scope": scope_id})
            self.executor.dispatch(msg, exec_id)

    def broadcast_cancel(self, tid) -> None:
        """Scopes-off cancellation: record the traversal id on every executor."""
        for exec_id in range(self.engine.config.num_executors):
            if exec_id == self.exec_id:
                self.cancel_set.add(tid)
                continue
            msg = Message(SYS, self.qid, ("__cancel__", 0), ScopeTag(),
                          sys={"kind": "cancel_tid", "tid": tid})
            self.executor.dispatch(msg, exec_id)

    def request_si_termination(self, sop: ScopeOperator, si: int) -> None:
        sop.terminate_si(si, broadcast=True)

    # -- graph access -------------------------------------------------------

    def neighbors(self, op, element, direction: str, label: str):
        if op.tablet_id is None:
            raise EngineFault(
                f"pure operator {op.key} attempted graph access")
        return self.engine.tablets[op.tablet_id].neighbors(element, direction, label)

    def vertex_properties(self, op, element):
        if op.tablet_id is None:
            raise EngineFault(
                f"pure operator {op.key} attempted graph access")
        return self.engine.tablets[op.tablet_id].properties(element)

    def backward_channels(self, scope_id: str) -> list[tuple]:
        chans = []
        scope = self.df.scopes[scope_id]
        for edge in self.df.in_edges(scope.ingress_vertex_id):
            if not edge.backward:
                continue
            for src in self.plan.ops_of.get(edge.src, []):
                chans.append((edge.edge_id, src.gidx))
        return chans

    # -- results / accounting -------------------------------------------------

    def collect_result(self, item: Item) -> None:
        self.engine.collect_result(self.qid, item)

    def root_egress_concluded(self) -> None:
        self.engine.root_egress_concluded(self.qid, self.exec_id)

    def count_processed(self, leaf: VertexOperator, msg: Message) -> None:
        self.engine.inflight.dec()
        self.executor.tick += 1
        stats = self.query.stats
        stats.bump("messages_processed")
        if msg.kind == DATA:
            stats.bump("data_processed")
            group = leaf.vdecl.group
            if group:
                stats.bump_group(group)
        else:
            stats.bump("eos_processed")
        if leaf.op.tablet_id is not None:
            self.executor.tablet_hits[leaf.op.tablet_id] = \
                self.executor.tablet_hits.get(leaf.op.tablet_id, 0) + 1
        self.engine.tracer.record(self.executor.tick, self.exec_id,
                                  leaf.make_address(), "PROC",
                                  kind=msg.kind, edge=msg.edge_id)

    def count_boundary_event(self, sop: ScopeOperator) -> None:
        self.engine.inflight.dec()
        self.query.stats.bump("boundary_events")

    def count_op_created(self, leaf: VertexOperator) -> None:
        self.query.stats.bump("operators_created")
        self.engine.tracer.record(self.executor.tick, self.exec_id,
                                  leaf.make_address(), "CREATE")

    def count_op_destroyed(self, leaf: VertexOperator) -> None:
        self.query.stats.bump("operators_destroyed")

    def drop_mailbox(self, leaf: VertexOperator) -> None:
        while leaf.mailbox:
            leaf.mailbox.popleft()
            self.engine.inflight.dec()
            self.query.stats.bump("messages_dropped")

    def drop_message(self, msg: Message) -> None:
        self.engine.inflight.dec()
        self.query.stats.bump("messages_dropped")

    def audit_live_si(self, sop: ScopeOperator) -> None:
        cap = self.max_si_for(sop.scope)
        self.engine.tracer.record(self.executor.tick, self.exec_id,
                                  sop.make_address(0), "LIVE_SI",
                                  live=sop.admitted_live, cap=cap)
        if cap is not None and sop.admitted_live > cap:
            raise EngineFault(
                f"scope {sop.scope.scope_id} exceeded max_si={cap} "
                f"on executor {self.exec_id}")

    def trace(self, event: str, address) -> None:
        self.engine.tracer.record(self.executor.tick, self.exec_id, address, event)


def scope_collector_vertex(df, scope) -> Optional[str]:
    """The per-instance designated vertex feeding this scope's egress, if any
    (used to co-locate miss detection with the instance's hit collector)."""
    for edge in df.in_edges(scope.egress_vertex_id):
        decl = df.vertices.get(edge.src)
        if decl is not None and decl.stateful and decl.access != GRAPH_ACCESSING:
            region = df.vertex_region.get(edge.src)
            if region == scope.scope_id:
                return edge.src
    return None


class Executor:
    """One logical thread of control owning a slice of every query's operators."""

    def __init__(self, engine, exec_id: int):
        self.engine = engine
        self.exec_id = exec_id
        self.inbox: deque = deque()
        self._inbox_lock = threading.Lock()
        self.queries: dict[int, QueryRuntime] = {}
        self._query_order: list[int] = []
        self.outboxes: dict[int, list] = {}
        self.tick = 0
        self.quantum_index = 0
        self.tablet_hits: dict[int, int] = {}
        self.window: deque = deque(maxlen=engine.config.load_window)
        self._pool: list[VertexOperator] = []
        self._peak_live = 0
        self._live_shells = 0

    # -- shells -------------------------------------------------------------

    def take_shell(self) -> VertexOperator:
        self._live_shells += 1
        self._peak_live = max(self._peak_live, self._live_shells)
        if self._pool:
            return self._pool.pop()
        return VertexOperator()

    def return_shell(self, leaf: VertexOperator) -> None:
        self._live_shells -= 1
        if len(self._pool) < max(8, 2 * self._peak_live):
            leaf.reset(None, None, None, None, None, None)
            self._pool.append(leaf)

    # -- query attach ---------------------------------------------------------

    def attach_query(self, query) -> QueryRuntime:
        rt = QueryRuntime(self, query)
        self.queries[query.qid] = rt
        self._query_order.append(query.qid)
        return rt

    def detach_query(self, qid: int) -> None:
        self.queries.pop(qid, None)
        if qid in self._query_order:
            self._query_order.remove(qid)

    # -- messaging --------------------------------------------------------------

    def dispatch(self, msg: Message, dest_exec: int) -> None:
        self.engine.inflight.inc()
        if dest_exec == self.exec_id:
            self.deliver(msg)
            return
        batch = self.outboxes.setdefault(dest_exec, [])
        batch.append(msg)
        if len(batch) >= self.engine.config.batch_size:
            self.flush_outbox(dest_exec)

    def flush_outbox(self, dest_exec: int) -> None:
        batch = self.outboxes.get(dest_exec)
        if batch:
            self.outboxes[dest_exec] = []
            self.engine.executors[dest_exec].enqueue_inbound(batch)

    def flush_all(self) -> None:
        for dest in sorted(self.outboxes):
            self.flush_outbox(dest)

    def enqueue_inbound(self, batch: list) -> None:
        with self._inbox_lock:
            self.inbox.append(batch)

    def drain_inbox(self) -> None:
        while True:
            with self._inbox_lock:
                if not self.inbox:
                    return
                batch = self.inbox.popleft()
            for msg in batch:
                self.deliver(msg)

    # -- delivery ----------------------------------------------------------------

    def deliver(self, msg: Message) -> str:
        rt = self.queries.get(msg.qid)
        if rt is None:
            self.engine.inflight.dec()
            return DROPPED_TOMBSTONE
        if msg.dest_key == ("__cancel__", 0):
            rt.cancel_set.add(msg.sys["tid"])
            self.engine.inflight.dec()
            return CONSUMED
        vertex_id, part = msg.dest_key
        df = rt.df
        decl = df.vertices[vertex_id]
        boundary_scope = _boundary_scope(df, vertex_id)
        if boundary_scope is not None:
            scope, is_ingress = boundary_scope
            if is_ingress:
                base = _ingress_base(scope, df, msg)
            elif msg.kind == SYS:
                base = msg.tag
            else:
                base = msg.tag.stripped()
            sop = rt.get_sop(scope.scope_id, base)
            if sop is None or sop.closed:
                self.engine.inflight.dec()
                rt.query.stats.bump("messages_dropped")
                return DROPPED_TOMBSTONE
            if is_ingress:
                sop.ingress_receive(msg)
            else:
                sop.egress_receive(msg)
            return CONSUMED
        # Plain leaf operator.
        chain = df.membership_chain(vertex_id)
        if len(chain) != msg.tag.depth:
            raise EngineFault(
                f"message tag {msg.tag} does not match nesting of {vertex_id}")
        region = chain[-1]
        sop = rt.get_sop(region, msg.tag.stripped())
        if sop is None:
            self.engine.inflight.dec()
            rt.query.stats.bump("messages_dropped")
            return DROPPED_TOMBSTONE
        si = msg.tag[-1]
        if si in sop.tombstones:
            self.engine.inflight.dec()
            rt.query.stats.bump("messages_dropped")
            rt.trace("DROP_TOMBSTONE", sop.make_address(si))
            return DROPPED_TOMBSTONE
        group = sop.directory.get(si, {})
        existing = group.get(msg.dest_key)
        if existing is not None:
            existing.enqueue(msg)
            return DELIVERED
        if msg.kind == EOS:
            outcome = sop.buffer_eos(vertex_id, part, msg.tag, msg)
            if outcome in (BUFFERED, EMITTED_ON_BEHALF, DROPPED_TOMBSTONE):
                self.engine.inflight.dec()
            return outcome
        leaf = sop.ensure_leaf(vertex_id, part, msg.tag)
        if leaf is None:
            self.engine.inflight.dec()
            rt.query.stats.bump("messages_dropped")
            return DROPPED_TOMBSTONE
        leaf.enqueue(msg)
        return CREATED_AND_DELIVERED

    # -- quantum ----------------------------------------------------------------

    def has_runnable(self) -> bool:
        return any(rt.root_sop is not None and rt.root_sop.runnable
                   for rt in self.queries.values())

    def idle(self) -> bool:
        with self._inbox_lock:
            inbox_empty = not self.inbox
        return inbox_empty and not self.has_runnable() and \
            not any(self.outboxes.values())

    def run_quantum(self, budget: int) -> WorkReport:
        report = WorkReport(self.exec_id, self.tick)
        self.drain_inbox()
        runnable = [qid for qid in self._query_order
                    if (rt := self.queries.get(qid)) is not None
                    and rt.root_sop is not None and rt.root_sop.runnable]
        shares = assign_quota(budget, runnable)
        for qid, share in zip(runnable, shares):
            rt = self.queries.get(qid)
            if rt is None:
                continue
            spent = 0
            while spent < share:
                root = rt.root_sop
                if root is None or not root.runnable:
                    break
                leaf = root.pick_best()
                if leaf is None:
                    break
                msg = leaf.process_one()
                if msg is None:
                    continue
                spent += 1
                addr = leaf.make_address().encode()
                report.processed[addr] = report.processed.get(addr, 0) + 1
            if spent:
                report.per_query[qid] = spent
                rt.query.stats.bump("ticks", spent)
        self.flush_all()
        self.window.append(report.total)
        self.quantum_index += 1
        report.tick_end = self.tick
        return report


def _boundary_scope(df, vertex_id: str):
    for scope in df.scopes.values():
        if vertex_id == scope.ingress_vertex_id:
            return scope, True
        if vertex_id == scope.egress_vertex_id:
            return scope, False
    return None


def _ingress_base(scope, df, msg: Message) -> ScopeTag:
    """The parent tag pinning which scope-operator instance handles this
    message: entering messages already carry it; backward ones carry the
    instance tag and must be stripped."""
    if msg.kind == SYS:
        return msg.tag
    edge = df.edges[msg.edge_id]
    if edge.backward:
        return msg.tag.stripped()
    return msg.tag
