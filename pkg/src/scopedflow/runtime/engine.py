"""The engine: executors, query admission, deterministic and threaded drivers.

Deterministic mode steps executors one quantum at a time in a seed-shuffled
round order on the calling thread; quota units are messages processed, so runs
are exactly reproducible.  Wall mode runs one thread per executor with
microsecond quota budgets and optional core pinning.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import EngineFault
from ..graph import PropertyGraph, RoutingTable, Tablet
from ..policies import DEFAULT_REGISTRY, PolicyRegistry
from ..tags import ScopeTag
from ..trace import LEVEL_OFF, RunStats, Tracer
from .executor import Executor, QueryRuntime
from .messages import DATA, EOS, SYS, Item, Message
from .plan import PhysicalPlan


@dataclass
class EngineConfig:
    num_executors: int = 1
    quota: int = 64                # units per executor per quantum
    deterministic: bool = True
    seed: int = 0
    batch_size: int = 256
    trace_level: int = LEVEL_OFF
    load_window: int = 32          # quanta per load-measurement window
    max_quanta: int = 2_000_000    # deterministic-mode timeout
    wall_quota_us: int = 2000      # wall-mode per-quantum budget
    wall_timeout_s: float = 60.0
    pin_executors: bool = False


class _InflightCounter:
    def __init__(self):
        self._value = 0
        self._lock = threading.Lock()

    def inc(self) -> None:
        with self._lock:
            self._value += 1

    def dec(self) -> None:
        with self._lock:
            self._value -= 1

    @property
    def value(self) -> int:
        with self._lock:
            return self._value


class Query:
    """Engine-level state for one submitted query."""

    def __init__(self, qid: int, plan: PhysicalPlan, registry: PolicyRegistry,
                 params: dict, shared: dict, max_si_overrides: dict,
                 collector: Optional[Callable] = None):
        self.qid = qid
        self.plan = plan
        self.registry = registry
        self.params = params
        self.shared = shared
        self.max_si_overrides = max_si_overrides
        self.collector = collector
        self.cancel_set: set = set()
        self.stats = RunStats()
        self.results: list = []
        self.done = threading.Event()
        self.timed_out = False
        self.submit_tick = 0
        self.complete_tick = 0
        self._concluded_execs: set[int] = set()
        self._expected_concluders = 0


class Engine:
    def __init__(self, config: EngineConfig, graph: Optional[PropertyGraph] = None,
                 tablets: Optional[list[Tablet]] = None,
                 routing: Optional[RoutingTable] = None,
                 registry: Optional[PolicyRegistry] = None):
        self.config = config
        self.graph = graph
        self.tablets = tablets or []
        self.routing = routing
        self.registry = registry or DEFAULT_REGISTRY
        self.tracer = Tracer(config.trace_level)
        self.inflight = _InflightCounter()
        self.executors = [Executor(self, e) for e in range(config.num_executors)]
        self.queries: dict[int, Query] = {}
        self._qid_lock = threading.Lock()
        self._next_qid = 0
        self._rng = random.Random(config.seed)
        self.quanta = 0
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    # ------------------------------------------------------------------
    # routing snapshots (swapped atomically by the balance module)

    def publish_routing(self, routing: RoutingTable) -> None:
        self.routing = routing

    # ------------------------------------------------------------------
    # submission

    def submit(self, plan: PhysicalPlan, params: Optional[dict] = None,
               shared: Optional[dict] = None,
               max_si_overrides: Optional[dict] = None,
               collector: Optional[Callable] = None) -> int:
        """Install a query on every executor and inject its trigger input."""
        with self._qid_lock:
            qid = self._next_qid
            self._next_qid += 1
        query = Query(qid, plan, self.registry, params or {}, shared or {},
                      max_si_overrides or {}, collector)
        query.submit_tick = self.total_ticks()
        self.queries[qid] = query
        for ex in self.executors:
            ex.attach_query(query)
        root_scope = plan.df.scopes[plan.df.root_scope_id]
        ingress_ops = plan.ingress_ops(root_scope.scope_id)
        query._expected_concluders = len(plan.egress_ops(root_scope.scope_id))
        submit_edge = _submit_edge_id(plan.df, root_scope)
        trigger = Message(DATA, qid, ingress_ops[0].key, ScopeTag(),
                          edge_id=submit_edge, channel=("__submit__", -1),
                          item=Item(element=None))
        self._inject(trigger, ingress_ops[0].exec_id)
        for op in ingress_ops:
            eos = Message(EOS, qid, op.key, ScopeTag(),
                          edge_id=submit_edge, channel=("__submit__", -1))
            self._inject(eos, op.exec_id)
        return qid

    def _inject(self, msg: Message, exec_id: int) -> None:
        self.inflight.inc()
        self.executors[exec_id].enqueue_inbound([msg])

    # ------------------------------------------------------------------
    # results / completion plumbing

    def collect_result(self, qid: int, item: Item) -> None:
        query = self.queries.get(qid)
        if query is None:
            return
        query.results.append(item.element)
        query.stats.bump("results")
        if query.collector is not None:
            query.collector(item.element)

    def root_egress_concluded(self, qid: int, exec_id: int) -> None:
        query = self.queries.get(qid)
        if query is None:
            return
        query._concluded_execs.add(exec_id)
        if len(query._concluded_execs) >= query._expected_concluders:
            query.complete_tick = self.total_ticks()
            query.stats.bump("completed")
            query.done.set()

    # ------------------------------------------------------------------
    # driving

    def total_ticks(self) -> int:
        return sum(ex.tick for ex in self.executors)

    def quiescent(self) -> bool:
        if self.inflight.value != 0:
            return False
        for ex in self.executors:
            if not ex.idle():
                return False
        return True

    def has_blocked_pending(self) -> bool:
        for ex in self.executors:
            for rt in ex.queries.values():
                for sop in rt.sops.values():
                    if sop.pending:
                        return True
        return False

    def step_quantum(self) -> None:
        order = list(range(len(self.executors)))
        self._rng.shuffle(order)
        for idx in order:
            self.executors[idx].run_quantum(self.config.quota)
        self.quanta += 1

    def run_until(self, predicate: Callable[[], bool],
                  max_quanta: Optional[int] = None) -> bool:
        """Deterministic driver: step rounds of quanta until the predicate
        holds or the engine quiesces with it unmet (False also on timeout)."""
        limit = max_quanta if max_quanta is not None else self.config.max_quanta
        for _ in range(limit):
            if predicate():
                return True
            if self.quiescent():
                return predicate()
            self.step_quantum()
        return predicate()

    def run_query(self, plan: PhysicalPlan, params: Optional[dict] = None,
                  shared: Optional[dict] = None,
                  max_si_overrides: Optional[dict] = None,
                  max_quanta: Optional[int] = None) -> Query:
        qid = self.submit(plan, params, shared, max_si_overrides)
        query = self.queries[qid]
        if self.config.deterministic:
            finished = self.run_until(query.done.is_set, max_quanta)
            if not finished:
                if self.quiescent():
                    raise EngineFault(
                        f"query {qid} stalled: engine quiescent before root "
                        f"completion (blocked pending: {self.has_blocked_pending()})")
                query.timed_out = True
                query.stats.bump("timeout")
        else:
            self.start_threads()
            deadline = time.monotonic() + self.config.wall_timeout_s
            if not query.done.wait(max(deadline - time.monotonic(), 0.001)):
                query.timed_out = True
                query.stats.bump("timeout")
        return query

    # ------------------------------------------------------------------
    # wall mode

    def start_threads(self) -> None:
        if self._threads:
            return
        self._stop.clear()
        for ex in self.executors:
            t = threading.Thread(target=self._executor_loop, args=(ex,),
                                 name=f"executor-{ex.exec_id}", daemon=True)
            self._threads.append(t)
            t.start()

    def stop_threads(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def _executor_loop(self, ex: Executor) -> None:
        if self.config.pin_executors and hasattr(os, "sched_setaffinity"):
            try:
                cpus = sorted(os.sched_getaffinity(0))
                os.sched_setaffinity(0, {cpus[ex.exec_id % len(cpus)]})
            except OSError:
                pass
        budget_units = max(self.config.quota, 1)
        while not self._stop.is_set():
            if ex.idle():
                time.sleep(0.0005)
                continue
            ex.run_quantum(budget_units)

    # ------------------------------------------------------------------

    def teardown_query(self, qid: int) -> None:
        for ex in self.executors:
            ex.detach_query(qid)
        self.queries.pop(qid, None)

    def load_snapshot(self) -> dict:
        """Consistent (between-quanta) load view for the balance module."""
        per_exec = {}
        for ex in self.executors:
            per_exec[ex.exec_id] = {
                "window_processed": sum(ex.window),
                "backlog": sum(
                    len(leaf.mailbox)
                    for rt in ex.queries.values()
                    for sop in rt.sops.values()
                    for group in sop.directory.values()
                    for leaf in group.values()
                    if hasattr(leaf, "mailbox")),
                "tablets": self.routing.tablets_of_executor(ex.exec_id)
                if self.routing else [],
            }
        tablet_hits = {}
        for ex in self.executors:
            for t, n in ex.tablet_hits.items():
                tablet_hits[t] = tablet_hits.get(t, 0) + n
        return {"executors": per_exec, "tablet_hits": tablet_hits}

    def reset_load_window(self) -> None:
        for ex in self.executors:
            ex.window.clear()
            ex.tablet_hits.clear()


def _submit_edge_id(df, root_scope) -> str:
    for edge in df.in_edges(root_scope.ingress_vertex_id):
        if not edge.backward:
            return edge.edge_id
    raise EngineFault(
        "root scope has no entering edge for the submission trigger")
