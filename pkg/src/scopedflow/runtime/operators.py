"""Operator trees: leaf vertex operators and the scope operators that create,
schedule, and terminate them.

Each executor holds a forest with one root scope operator per live query.
Scope operators manage one scope under one parent tag: they own a directory of
children grouped by instance ordinal (a two-level prefix tree over address
suffixes), tombstones for terminated ordinals, the scope's ingress/egress
bookkeeping on this executor, and EOS buffers for operators that were never
created.  Leaf operators hold a mailbox, the user logic instance, and the EOS
ledger for their fixed tag.

Scope boundary work (routing, instance accounting, EOS reports) is processed
eagerly at delivery time: it is cheap tag arithmetic the paper's model assigns
to system-provided vertices, and handling it outside the quota scheduler keeps
progress control messages from competing with user work.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from ..dataflow import BRANCH, LOOP, GRAPH_ACCESSING, ScopeDecl, VertexDecl
from ..dataflow import IngressState, ingress_route
from ..errors import EngineFault
from ..progress import (EOS_NONE, BranchEgressTracker, LoopEgressTracker,
                        LoopIngressTracker, OperatorEosLedger, SiCountReport,
                        on_eos)
from ..tags import ScopeTag
from .messages import (BUFFERED, CONSUMED, CREATED_AND_DELIVERED, DATA,
                       DELIVERED, DROPPED_TOMBSTONE, EMITTED_ON_BEHALF,
                       ENQUEUED, EOS, SYS, Item, Message, OperatorAddress)


class VertexOperator:
    """Leaf operator: one vertex, one partition, one scope tag."""

    __slots__ = ("rt", "op", "vdecl", "tag", "si", "parent", "address",
                 "mailbox", "ledger", "logic", "alive", "completed",
                 "eos_emitted", "runnable", "stamp", "barrier_seen",
                 "processed")

    def __init__(self):
        self.mailbox = deque()
        self.reset(None, None, None, None, None, None)

    def reset(self, rt, op, vdecl, tag, parent, ledger):
        self.rt = rt
        self.op = op
        self.vdecl = vdecl
        self.tag = tag
        self.si = tag[-1] if tag is not None and len(tag) else None
        self.parent = parent
        self.address = None
        self.mailbox.clear()
        self.ledger = ledger
        self.logic = vdecl.make_logic() if vdecl is not None else None
        self.alive = vdecl is not None
        self.completed = False
        self.eos_emitted = set()
        self.runnable = False
        self.stamp = 0
        self.barrier_seen = {}
        self.processed = 0

    # -- identity ------------------------------------------------------

    @property
    def key(self):
        return self.op.key

    @property
    def item_id(self) -> str:
        return self.op.vertex_id

    def make_address(self) -> OperatorAddress:
        if self.address is None:
            chain = self.parent.chain_for(self.si)
            self.address = OperatorAddress(self.rt.exec_id, chain,
                                           f"{self.op.vertex_id}#{self.op.part}")
        return self.address

    # -- mailbox / scheduling -------------------------------------------

    def enqueue(self, msg: Message) -> None:
        self.mailbox.append(msg)
        if self.alive and not self.runnable:
            self.runnable = True
            self.stamp = self.rt.next_stamp()
            self.parent.child_became_runnable(self)

    def _sync_runnable(self) -> None:
        if self.runnable and (not self.mailbox or not self.alive):
            self.runnable = False
            self.parent.child_not_runnable(self)

    def process_one(self) -> Optional[Message]:
        """Process exactly one mailbox message (one quota unit)."""
        if not self.mailbox or not self.alive:
            self._sync_runnable()
            return None
        msg = self.mailbox.popleft()
        self.processed += 1
        self.rt.count_processed(self, msg)
        if msg.kind == DATA:
            if msg.item is not None and msg.item.barrier is not None:
                self._on_barrier(msg)
            else:
                self.logic.receive(self, msg.item, msg.edge_id)
        elif msg.kind == EOS:
            self._on_eos(msg)
        else:
            raise EngineFault(f"leaf operator got SYS message {msg.sys!r}")
        if self.alive:
            self._sync_runnable()
        return msg

    # -- EOS / completion ------------------------------------------------

    def _on_eos(self, msg: Message) -> None:
        action = on_eos(self.ledger, msg.channel, has_outputs=True)
        if action == EOS_NONE:
            return
        self.complete(fire_callback=True)

    def complete(self, fire_callback: bool) -> None:
        if self.completed or not self.alive:
            return
        self.completed = True
        if fire_callback and self.logic is not None:
            self.logic.on_completion(self)
        self.emit_remaining_eos()
        self.rt.trace("COMPLETE", self.make_address())
        # Anything left in the mailbox after completion is dropped.
        self.rt.drop_mailbox(self)
        parent = self.parent
        self.alive = False
        self._sync_runnable()
        parent.child_finished(self)

    def notify_completion(self) -> None:
        """Proactive completion from inside user logic: mark complete, emit
        EOS downstream, discard queued input; no OnCompletion callback runs."""
        if self.completed or not self.alive:
            return
        cancels = self.vdecl.cancel_scope_on_complete
        self.complete(fire_callback=False)
        self.rt.trace("NOTIFY", self.make_address())
        if cancels:
            self.rt.request_si_termination(self.parent, self.si)

    def emit_remaining_eos(self) -> None:
        for edge in self.rt.df.out_edges(self.op.vertex_id):
            if edge.edge_id not in self.eos_emitted:
                self.eos_emitted.add(edge.edge_id)
                self.rt.send_eos(edge.edge_id, self.op, self.tag)

    # -- user logic API ----------------------------------------------------

    def send(self, edge_id: str, item: Item) -> None:
        if edge_id in self.eos_emitted:
            raise EngineFault(f"send on edge {edge_id} after its EOS")
        self.rt.send_data(edge_id, self.op, item, self.tag)

    def emit_eos(self, edge_id: str) -> None:
        if edge_id not in self.eos_emitted:
            self.eos_emitted.add(edge_id)
            self.rt.send_eos(edge_id, self.op, self.tag)

    def send_barrier(self, edge_id: str, ordinal: int) -> None:
        self.rt.send_barrier(edge_id, self.op, Item(barrier=ordinal), self.tag)

    @property
    def iteration(self) -> int:
        return self.si if self.si is not None else 0

    def neighbors(self, element, direction: str, label: str):
        return self.rt.neighbors(self.op, element, direction, label)

    def properties(self, element):
        return self.rt.vertex_properties(self.op, element)

    def params(self) -> dict:
        return self.rt.params

    def shared(self) -> dict:
        """Query-scoped constants computed before submission."""
        return self.rt.shared

    def cancel_set(self) -> set:
        """Scopes-off cancellation: traversal ids whose work is discarded."""
        return self.rt.cancel_set

    def request_cancel(self, tid) -> None:
        self.rt.broadcast_cancel(tid)

    # -- scopes-off loop barriers -----------------------------------------

    def _on_barrier(self, msg: Message) -> None:
        ordinal = msg.item.barrier
        expected = self.ledger.expected
        seen = self.barrier_seen.setdefault(ordinal, set())
        if msg.channel in seen:
            raise EngineFault(f"duplicate barrier {ordinal} on {msg.channel}")
        seen.add(msg.channel)
        if len(seen) < len(expected):
            return
        del self.barrier_seen[ordinal]
        handler = getattr(self.logic, "on_barrier", None)
        if handler is not None:
            handler(self, ordinal)
        else:
            for edge in self.rt.df.out_edges(self.op.vertex_id):
                self.send_barrier(edge.edge_id, ordinal)

    def destroy(self) -> None:
        self.alive = False
        self._sync_runnable()


class _SiState:
    """Local bookkeeping for one scope instance on one executor."""

    __slots__ = ("ordinal", "admitted", "keys_remaining", "finished_keys",
                 "skip_buffers", "closed")

    def __init__(self, ordinal: int, keys, admitted: bool):
        self.ordinal = ordinal
        self.admitted = admitted
        self.keys_remaining = {k: None for k in keys}
        self.finished_keys: set = set()
        self.skip_buffers: dict[tuple, list[Message]] = {}
        self.closed = False


class ScopeOperator:
    """Manages the local operators of one scope under one parent tag."""

    def __init__(self, rt, scope: ScopeDecl, base_tag: ScopeTag,
                 parent: Optional["ScopeOperator"]):
        self.rt = rt
        self.scope = scope
        self.base_tag = base_tag
        self.parent = parent
        self.si = base_tag[-1] if len(base_tag) else None
        self.directory: dict[int, dict[tuple, object]] = {}
        self.tombstones: set[int] = set()
        self.si_states: dict[int, _SiState] = {}
        self.admitted_live = 0
        self.pending: deque = deque()
        self.runnable_children: dict[tuple, object] = {}
        self.runnable = False
        self.stamp = 0
        self.closed = False

        plan = rt.plan
        hosting = plan.scope_execs[scope.scope_id]
        self.hosting_execs = hosting
        self.ingress_index = hosting.index(rt.exec_id) if rt.exec_id in hosting else None
        self.ingress_op = None
        self.egress_op = None
        if self.ingress_index is not None:
            self.ingress_op = plan.op_by_key[(scope.ingress_vertex_id, self.ingress_index)]
            self.egress_op = plan.op_by_key[(scope.egress_vertex_id, self.ingress_index)]
        self.alloc = IngressState(self.ingress_index or 0, max(len(hosting), 1))
        self.entering_ledger = OperatorEosLedger(self._entering_channels())
        self.entering_data_seen = False
        self.ingress_reported = False
        peer_count = len(hosting)
        if scope.kind == LOOP:
            self.loop_tracker = LoopIngressTracker(scope.scope_id,
                                                   self.ingress_index or 0, peer_count)
            self.backward_ledgers: dict[int, OperatorEosLedger] = {}
            self.egress_tracker = LoopEgressTracker(scope.scope_id, peer_count)
        else:
            self.loop_tracker = None
            self.backward_ledgers = {}
            self.egress_tracker = BranchEgressTracker(scope.scope_id, peer_count)
        self.egress_si_ledgers: dict[int, OperatorEosLedger] = {}
        self.egress_forwarded: dict[int, int] = {}
        self.si_meta: dict[int, Item] = {}
        self.egress_concluded = False

    # ------------------------------------------------------------------
    # addressing / directory

    def chain_for(self, si: int) -> tuple:
        own = ((self.scope.scope_id, si),)
        if self.parent is None:
            return own
        return self.parent.chain_for(self.si) + own

    def make_address(self, si: Optional[int] = None) -> OperatorAddress:
        chain = self.chain_for(si) if si is not None else (
            self.parent.chain_for(self.si) + ((self.scope.scope_id, 0),)
            if self.parent else ((self.scope.scope_id, 0),))
        return OperatorAddress(self.rt.exec_id, chain, None)

    def group(self, si: int) -> dict:
        """All local children of one scope instance (O(group size))."""
        return self.directory.get(si, {})

    @property
    def item_id(self) -> str:
        return self.scope.scope_id

    # ------------------------------------------------------------------
    # runnable bookkeeping (hierarchical scheduling)

    def child_became_runnable(self, child) -> None:
        key = self._child_key(child)
        if key in self.runnable_children:
            return
        self.runnable_children[key] = child
        if len(self.runnable_children) == 1:
            self.runnable = True
            self.stamp = getattr(child, "stamp", 0)
            if self.parent is not None:
                self.parent.child_became_runnable(self)
            else:
                self.rt.root_became_runnable()

    def child_not_runnable(self, child) -> None:
        key = self._child_key(child)
        if key not in self.runnable_children:
            return
        del self.runnable_children[key]
        if not self.runnable_children:
            self.runnable = False
            if self.parent is not None:
                self.parent.child_not_runnable(self)

    def _child_key(self, child) -> tuple:
        if isinstance(child, ScopeOperator):
            return ("scope", child.scope.scope_id, child.si)
        return ("leaf", child.key, child.si)

    def child_si(self, child) -> int:
        return child.si

    def pick_best(self) -> Optional[VertexOperator]:
        """Highest-priority runnable leaf under this scope operator, following
        the scope's inter-instance policy across ordinals and its
        intra-instance policy within one ordinal; ties fall back to arrival."""
        best = None
        for child in self.runnable_children.values():
            if best is None or self._outranks(child, best):
                best = child
        if best is None:
            return None
        if isinstance(best, ScopeOperator):
            return best.pick_best()
        return best

    def _outranks(self, a, b) -> bool:
        sa, sb = a.si, b.si
        if sa != sb:
            inter = self.rt.registry.inter_si(self.scope.inter_si_policy)
            verdict = inter(self.base_tag.extended(sa), self.base_tag.extended(sb))
            if verdict < 0:
                return True
            if verdict > 0:
                return False
            return a.stamp < b.stamp
        intra = self.rt.intra_comparator(self.scope.scope_id)
        verdict = intra(a.item_id, b.item_id)
        if verdict < 0:
            return True
        if verdict > 0:
            return False
        return a.stamp < b.stamp

    # ------------------------------------------------------------------
    # instance lifecycle

    def register_si(self, si: int, admitted: bool) -> bool:
        if si in self.tombstones:
            return False
        if si not in self.si_states:
            keys = self.rt.plan.local_internal_keys(self.scope.scope_id,
                                                    self.rt.exec_id, si)
            self.si_states[si] = _SiState(si, keys, admitted)
            if admitted:
                self.admitted_live += 1
            self.rt.trace("SI_OPEN", self.make_address(si))
            self.rt.audit_live_si(self)
        elif admitted and not self.si_states[si].admitted:
            self.si_states[si].admitted = True
            self.admitted_live += 1
            self.rt.audit_live_si(self)
        return True

    def saturated(self) -> bool:
        cap = self.rt.max_si_for(self.scope)
        return cap is not None and self.admitted_live >= cap

    def ensure_leaf(self, vertex_id: str, part: int, tag: ScopeTag
                    ) -> Optional[VertexOperator]:
        si = tag[-1]
        if si in self.tombstones:
            return None
        group = self.directory.get(si)
        if group is not None:
            existing = group.get((vertex_id, part))
            if existing is not None:
                return existing
        if not self.register_si(si, admitted=False):
            return None
        state = self.si_states[si]
        key = (vertex_id, part)
        if key in state.finished_keys:
            raise EngineFault(
                f"message for {key} in instance {si} after its EOS was fully handled")
        op = self.rt.plan.op_by_key[key]
        vdecl = self.rt.df.vertices[vertex_id]
        leaf = self.rt.executor.take_shell()
        ledger = OperatorEosLedger(self.rt.plan.expected_channels(vertex_id, part, tag))
        leaf.reset(self.rt, op, vdecl, tag, self, ledger)
        self.directory.setdefault(si, {})[key] = leaf
        self.rt.count_op_created(leaf)
        # Any EOS buffered while the operator did not exist follows it in.
        buffered = state.skip_buffers.pop(key, None)
        if buffered:
            self.rt.requeue_buffered(leaf, buffered)
        return leaf

    def buffer_eos(self, vertex_id: str, part: int, tag: ScopeTag,
                   msg: Message) -> str:
        """EOS for a not-yet-created child: buffer it, and once every expected
        channel has arrived with no data ever, emit the child's outgoing EOS
        on its behalf without creating it."""
        si = tag[-1]
        if si in self.tombstones:
            return DROPPED_TOMBSTONE
        if not self.register_si(si, admitted=False):
            return DROPPED_TOMBSTONE
        state = self.si_states[si]
        key = (vertex_id, part)
        if key in state.finished_keys:
            raise EngineFault(f"EOS for {key} in instance {si} arriving twice")
        buffered = state.skip_buffers.setdefault(key, [])
        for prior in buffered:
            if prior.channel == msg.channel:
                raise EngineFault(f"duplicate EOS on channel {msg.channel!r}")
        buffered.append(msg)
        expected = self.rt.plan.expected_channels(vertex_id, part, tag)
        if len(buffered) < len(expected):
            return BUFFERED
        op = self.rt.plan.op_by_key[key]
        state.skip_buffers.pop(key)
        for edge in self.rt.df.out_edges(vertex_id):
            self.rt.send_eos(edge.edge_id, op, tag)
        self.rt.trace("EOS_SKIP", OperatorAddress(
            self.rt.exec_id, self.chain_for(si), f"{vertex_id}#{part}"))
        self.child_key_done(si, key)
        return EMITTED_ON_BEHALF

    def child_finished(self, leaf: VertexOperator) -> None:
        si = leaf.si
        group = self.directory.get(si)
        if group and group.get(leaf.key) is leaf:
            del group[leaf.key]
        self.rt.executor.return_shell(leaf)
        self.child_key_done(si, leaf.key)

    def child_key_done(self, si: int, key: tuple) -> None:
        state = self.si_states.get(si)
        if state is None or state.closed:
            return
        state.finished_keys.add(key)
        state.keys_remaining.pop(key, None)
        if not state.keys_remaining:
            self._close_si(si)

    def _close_si(self, si: int) -> None:
        state = self.si_states.get(si)
        if state is None or state.closed:
            return
        state.closed = True
        if state.admitted:
            self.admitted_live -= 1
        self.rt.trace("SI_CLOSE", self.make_address(si))
        self.drain_pending()
        self._check_scope_done()

    # ------------------------------------------------------------------
    # termination

    def terminate_si(self, si: int, *, broadcast: bool = True) -> list[OperatorAddress]:
        """Destroy every local operator with this instance ordinal in cascade,
        tombstone the ordinal, and record the instance as complete for egress
        accounting.  Idempotent."""
        if si in self.tombstones:
            return []
        self.tombstones.add(si)
        destroyed: list[OperatorAddress] = []
        group = self.directory.pop(si, {})
        for key, child in list(group.items()):
            if isinstance(child, ScopeOperator):
                destroyed.extend(child._terminate_all())
            else:
                destroyed.append(child.make_address())
                self.rt.drop_mailbox(child)
                child.destroy()
                self.rt.count_op_destroyed(child)
                self.rt.executor.return_shell(child)
        state = self.si_states.pop(si, None)
        if state is not None:
            # Buffered EOS were absorbed at buffering time; just discard.
            state.skip_buffers.clear()
            if state.admitted and not state.closed:
                self.admitted_live -= 1
        self.rt.trace("TERMINATE_SI", self.make_address(si))
        self.egress_si_terminated(si)
        if broadcast:
            self.rt.broadcast_terminate(self.scope.scope_id, self.base_tag, si)
        self.drain_pending()
        self._check_scope_done()
        return destroyed

    def _terminate_all(self) -> list[OperatorAddress]:
        destroyed: list[OperatorAddress] = []
        for si in list(self.directory.keys()) + list(self.si_states.keys()):
            if si not in self.tombstones:
                destroyed.extend(self.terminate_si(si, broadcast=False))
        self.pending.clear()
        self.closed = True
        if self.parent is not None:
            self.parent.child_not_runnable(self)
        self.rt.unregister_sop(self)
        return destroyed

    # ------------------------------------------------------------------
    # ingress side (processed eagerly at delivery)

    def _entering_channels(self) -> list[tuple]:
        entering = []
        for edge in self.rt.df.in_edges(self.scope.ingress_vertex_id):
            if edge.backward:
                continue
            for src in self.rt.plan.ops_of.get(edge.src, []):
                entering.append((edge.edge_id, src.gidx))
        if not entering and self.rt.df.root_scope_id == self.scope.scope_id:
            entering = [("__submit__", -1)]
        return entering

    def ingress_receive(self, msg: Message) -> None:
        self.rt.count_boundary_event(self)
        if self.pending:
            self.pending.append(msg)
            return
        self._ingress_apply(msg)

    def _ingress_apply(self, msg: Message) -> None:
        if msg.kind == DATA:
            edge = self.rt.df.edges[msg.edge_id]
            if edge.backward:
                self._ingress_backward_data(msg)
            else:
                self._ingress_entering_data(msg)
        elif msg.kind == EOS:
            edge = self.rt.df.edges[msg.edge_id]
            if edge.backward:
                self._ingress_backward_eos(msg)
            else:
                self._ingress_entering_eos(msg)
        else:
            self._ingress_sys(msg)

    def _ingress_entering_data(self, msg: Message) -> None:
        self.entering_data_seen = True
        if self.loop_tracker is not None:
            self.loop_tracker.record_data(0)
        if self.scope.kind == BRANCH and self.saturated():
            self.pending.append(msg)
            return
        route = ingress_route(msg.tag, self.scope, False, self.alloc)
        if route.instantiate:
            self.register_si(route.tag[-1], admitted=True)
            if self.scope.miss_edge_id is not None:
                self._send_si_meta(route.tag[-1], msg.item)
        cont = self.rt.df.ingress_forwarding[self.scope.scope_id][msg.edge_id]
        self.rt.send_data(cont, self.ingress_op, msg.item, route.tag)
        if self.scope.kind == BRANCH:
            # A branch instance receives exactly this one message: close its
            # ingress channels right behind it.
            self._emit_instance_eos(route.tag)

    def _ingress_backward_data(self, msg: Message) -> None:
        iteration = msg.tag[-1]
        self.loop_tracker.record_data(iteration)
        next_ordinal = iteration + 1
        if next_ordinal not in self.alloc.known_instances and self.saturated():
            self.pending.append(msg)
            return
        route = ingress_route(msg.tag, self.scope, True, self.alloc)
        if route.instantiate:
            self.register_si(route.tag[-1], admitted=True)
        cont = self.rt.df.ingress_forwarding[self.scope.scope_id][msg.edge_id]
        self.rt.send_data(cont, self.ingress_op, msg.item, route.tag)

    def _ingress_entering_eos(self, msg: Message) -> None:
        if not self.entering_ledger.record(msg.channel):
            return
        self._entering_closed()

    def _entering_closed(self) -> None:
        if self.scope.kind == BRANCH:
            self.ingress_reported = True
            report = SiCountReport(self.scope.scope_id, self.ingress_index,
                                   "branch_count", self.alloc.allocated)
            self.rt.send_report(self.scope, self.base_tag, report)
            self.rt.trace("SI_REPORT", self.make_address(0))
            self._check_scope_done()
        else:
            gossip = self.loop_tracker.local_close(0)
            self.rt.send_iter_close(self.scope, self.base_tag, gossip)

    def _ingress_backward_eos(self, msg: Message) -> None:
        iteration = msg.tag[-1]
        ledger = self.backward_ledgers.get(iteration)
        if ledger is None:
            ledger = OperatorEosLedger(self.rt.backward_channels(self.scope.scope_id))
            self.backward_ledgers[iteration] = ledger
        if not ledger.record(msg.channel):
            return
        gossip = self.loop_tracker.local_close(iteration)
        self.rt.send_iter_close(self.scope, self.base_tag, gossip)

    def _ingress_sys(self, msg: Message) -> None:
        sys = msg.sys
        kind = sys["kind"]
        if kind == "iter_close":
            action = self.loop_tracker.peer_close(sys["index"], sys["iteration"],
                                                  sys["empty"])
            if action is None:
                return
            what, ordinal = action
            if what == "advance":
                self._emit_iteration_eos(ordinal)
            else:
                self.ingress_reported = True
                report = SiCountReport(self.scope.scope_id, self.ingress_index,
                                       "loop_empty", ordinal)
                self.rt.send_report(self.scope, self.base_tag, report)
                self.rt.trace("SI_REPORT", self.make_address(0))
                self._check_scope_done()
        elif kind == "terminate_si":
            self.terminate_si(sys["si"], broadcast=False)
        else:
            raise EngineFault(f"unknown scope control message {kind!r}")

    def _emit_instance_eos(self, tag: ScopeTag) -> None:
        fwd = self.rt.df.ingress_forwarding[self.scope.scope_id]
        for inner_edge in fwd.values():
            self.rt.send_eos(inner_edge, self.ingress_op, tag)

    def _emit_iteration_eos(self, ordinal: int) -> None:
        if self.pending:
            self.pending.append(("emit_iter_eos", ordinal))
            return
        tag = self.base_tag.extended(ordinal)
        if tag[-1] not in self.tombstones:
            self.register_si(ordinal, admitted=False)
        self._emit_instance_eos(tag)

    def _send_si_meta(self, si: int, item: Item) -> None:
        self.rt.send_si_meta(self.scope, self.base_tag, si, item)

    def drain_pending(self) -> None:
        while self.pending and not self.closed:
            head = self.pending[0]
            if isinstance(head, tuple) and head and head[0] == "emit_iter_eos":
                self.pending.popleft()
                self._emit_iteration_eos(head[1])
                continue
            needs_admission = self._pending_needs_admission(head)
            if needs_admission and self.saturated():
                return
            self.pending.popleft()
            self._ingress_apply(head)

    def _pending_needs_admission(self, msg) -> bool:
        if not isinstance(msg, Message) or msg.kind != DATA:
            return False
        edge = self.rt.df.edges[msg.edge_id]
        if self.scope.kind == BRANCH:
            return True
        dest = msg.tag.advanced() if edge.backward else msg.tag.extended(1)
        return dest[-1] not in self.alloc.known_instances

    # ------------------------------------------------------------------
    # egress side (processed eagerly at delivery)

    def egress_receive(self, msg: Message) -> None:
        self.rt.count_boundary_event(self)
        if msg.kind == DATA:
            self._egress_data(msg)
        elif msg.kind == EOS:
            self._egress_eos(msg)
        else:
            sys = msg.sys
            if sys["kind"] == "si_report":
                self.egress_tracker.record_report(sys["report"])
                self._check_egress_conclusion()
            elif sys["kind"] == "si_meta":
                si = sys["si"]
                if si not in self.tombstones:
                    self.si_meta[si] = sys["item"]
            else:
                raise EngineFault(f"unknown egress control message {sys['kind']!r}")

    def _egress_data(self, msg: Message) -> None:
        si = msg.tag[-1]
        if si in self.tombstones:
            self.rt.trace("DROP_TOMBSTONE", self.make_address(si))
            return
        self.egress_forwarded[si] = self.egress_forwarded.get(si, 0) + 1
        outer = self.rt.df.egress_forwarding[self.scope.scope_id].get(msg.edge_id)
        stripped = msg.tag.stripped()
        if outer is None:
            self.rt.collect_result(msg.item)
        else:
            self.rt.send_data(outer, self.egress_op, msg.item, stripped)

    def _egress_eos(self, msg: Message) -> None:
        si = msg.tag[-1]
        if si in self.tombstones:
            return
        ledger = self.egress_si_ledgers.get(si)
        if ledger is None:
            expected = self.rt.plan.expected_channels(
                self.scope.egress_vertex_id, self.egress_op.part, msg.tag)
            ledger = OperatorEosLedger(expected)
            self.egress_si_ledgers[si] = ledger
        if not ledger.record(msg.channel):
            return
        self._egress_si_complete(si)

    def _egress_si_complete(self, si: int) -> None:
        self.egress_tracker.record_si_complete(si)
        if self.scope.miss_edge_id is not None and \
                self.egress_forwarded.get(si, 0) == 0:
            meta = self.si_meta.pop(si, None)
            if meta is not None:
                self.rt.send_data(self.scope.miss_edge_id, self.egress_op,
                                  meta, self.base_tag)
        self.si_meta.pop(si, None)
        self._check_egress_conclusion()

    def egress_si_terminated(self, si: int) -> None:
        # Termination counts as completion so cancellation never stalls the scope.
        if self.egress_op is not None:
            self.egress_tracker.record_si_complete(si)
            self.si_meta.pop(si, None)
            self._check_egress_conclusion()

    def _check_egress_conclusion(self) -> None:
        if self.egress_concluded or self.egress_op is None:
            return
        expected = self.egress_tracker.expected_sis()
        if expected is None:
            return
        for si in expected:
            if si in self.egress_tracker.completed:
                continue
            tag = self.base_tag.extended(si)
            chans = self.rt.plan.expected_channels(
                self.scope.egress_vertex_id, self.egress_op.part, tag)
            if chans:
                return  # local slice still open; its last EOS will re-check
            # Instances with no local channels complete trivially.
            self._egress_si_complete_quietly(si)
        self.egress_concluded = True
        self.rt.trace("CONCLUDE", self.make_address(0))
        fwd = self.rt.df.egress_forwarding[self.scope.scope_id]
        outer_edges = {outer: None for outer in fwd.values()}
        if self.scope.miss_edge_id is not None:
            outer_edges[self.scope.miss_edge_id] = None
        stripped = self.base_tag
        for outer in outer_edges:
            self.rt.send_eos(outer, self.egress_op, stripped)
        if not fwd and self.rt.df.root_scope_id == self.scope.scope_id:
            self.rt.root_egress_concluded()
        self._check_scope_done()

    def _egress_si_complete_quietly(self, si: int) -> None:
        self.egress_tracker.record_si_complete(si)
        self.si_meta.pop(si, None)

    # ------------------------------------------------------------------
    # whole-scope closure

    def _check_scope_done(self) -> None:
        if self.closed:
            return
        if not self.egress_concluded:
            return
        if any(not s.closed for s in self.si_states.values()):
            return
        if self.pending:
            return
        self.closed = True
        self.tombstones.clear()
        if self.parent is not None:
            self.parent.child_not_runnable(self)
            self.parent.child_key_done(self.si, ("scope", self.scope.scope_id))
        self.rt.trace("SCOPE_DONE", self.make_address(0))
        self.rt.unregister_sop(self)
