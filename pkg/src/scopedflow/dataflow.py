"""Logical scoped-dataflow model: graphs, scopes, routing arithmetic, validation.

A logical dataflow is a directed graph whose vertices exchange messages along
edges.  A *scope* marks a replicable subgraph: at runtime each piece of input
entering the scope can run in its own isolated scope instance.  Scopes nest,
carry scheduling policies, and come in two kinds: branch scopes (no backward
edges, one instance per entering message) and loop scopes (backward edges feed
the next iteration's instance).

Everything in this module is pure model data: no runtime state lives here, so
validated dataflows can be shared read-only across executors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import ModelViolation
from .tags import ScopeTag

BRANCH = "branch"
LOOP = "loop"

GRAPH_ACCESSING = "graph"
PURE = "pure"

ROLE_USER = "user"
ROLE_INGRESS = "ingress"
ROLE_EGRESS = "egress"
ROLE_EXTERNAL = "external"  # stands in for input injected by the engine

# Edge partitioning function ids understood by the parallelizer.
PART_LOCAL = "local"        # deliver to the destination operator on the sender's executor
PART_HASH = "hash"          # hash the payload's element id across destination operators
PART_SINGLE = "single"      # all messages to the single destination operator
PART_BY_SI = "by_si"        # hash the scope-instance ordinal (designated egress)


@dataclass
class VertexDecl:
    """Declaration of one dataflow vertex and its user logic."""

    vertex_id: str
    logic: Optional[Callable[[], object]] = None
    access: str = PURE
    stateful: bool = False
    role: str = ROLE_USER
    # When True, this vertex calling NotifyCompletion cancels its whole
    # enclosing scope instance (the Example-2 style early-cancel trigger).
    cancel_scope_on_complete: bool = False
    # Free-form label used to attribute per-operator counters to a query
    # fragment (e.g. one where-subquery) in run statistics.
    group: str = ""

    def make_logic(self):
        if self.logic is None:
            return None
        return self.logic()


@dataclass
class EdgeDecl:
    edge_id: str
    src: str
    dst: str
    backward: bool = False
    partition: str = PART_LOCAL


@dataclass
class ScopeDecl:
    """A well-nested region of the dataflow replicable into scope instances."""

    scope_id: str
    kind: str
    internal_vertex_ids: set = field(default_factory=set)
    ingress_vertex_id: Optional[str] = None
    egress_vertex_id: Optional[str] = None
    max_si: Optional[int] = None  # None means unlimited
    inter_si_policy: str = "fifo"
    intra_si_policy: str = "fifo"
    depth: int = 0  # computed by finalize()
    parent_scope_id: Optional[str] = None  # computed
    # Edge of the parent region on which the egress emits an instance's
    # entering payload when the instance completes without forwarding any
    # output (used for until-style "no match" routing).  None disables it.
    miss_edge_id: Optional[str] = None

    def members(self) -> set:
        return set(self.internal_vertex_ids)


class ValidationReport:
    """Outcome of validate_dataflow: ok, or a list of named violations."""

    def __init__(self, violations: list[str]):
        self.violations = violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def __repr__(self) -> str:
        if self.ok:
            return "<ValidationReport ok>"
        return "<ValidationReport {} violation(s): {}>".format(
            len(self.violations), "; ".join(self.violations)
        )


class LogicalDataflow:
    """Directed graph of vertex declarations, edges, and scope declarations.

    Build with add_vertex/add_edge/add_scope, then call validate() (or the
    module-level validate_dataflow) which synthesizes missing scope boundary
    vertices, checks the structural rules, and freezes derived lookup tables.
    """

    def __init__(self, name: str = "dataflow", default_intra_policy: str = "fifo"):
        self.name = name
        self.vertices: dict[str, VertexDecl] = {}
        self.edges: dict[str, EdgeDecl] = {}
        self.scopes: dict[str, ScopeDecl] = {}
        self.default_intra_policy = default_intra_policy
        self.root_scope_id: Optional[str] = None
        # Per-scope maps from entering/backward edge id to the inner edge the
        # ingress forwards the message on, and from inner edge id to the outer
        # edge the egress continues it on.
        self.ingress_forwarding: dict[str, dict[str, str]] = {}
        self.egress_forwarding: dict[str, dict[str, str]] = {}
        self._finalized = False
        # Derived tables (filled by _finalize).
        self.vertex_region: dict[str, Optional[str]] = {}
        self.scope_chain: dict[str, tuple] = {}
        self.region_rank: dict[Optional[str], dict[str, int]] = {}

    # ------------------------------------------------------------------
    # construction

    def add_vertex(self, decl: VertexDecl) -> VertexDecl:
        if decl.vertex_id in self.vertices:
            raise ModelViolation(f"duplicate vertex id {decl.vertex_id!r}")
        self.vertices[decl.vertex_id] = decl
        self._finalized = False
        return decl

    def add_edge(self, decl: EdgeDecl) -> EdgeDecl:
        if decl.edge_id in self.edges:
            raise ModelViolation(f"duplicate edge id {decl.edge_id!r}")
        self.edges[decl.edge_id] = decl
        self._finalized = False
        return decl

    def add_scope(self, decl: ScopeDecl) -> ScopeDecl:
        if decl.scope_id in self.scopes:
            raise ModelViolation(f"duplicate scope id {decl.scope_id!r}")
        self.scopes[decl.scope_id] = decl
        self._finalized = False
        return decl

    def out_edges(self, vertex_id: str) -> list[EdgeDecl]:
        return [e for e in self.edges.values() if e.src == vertex_id]

    def in_edges(self, vertex_id: str) -> list[EdgeDecl]:
        return [e for e in self.edges.values() if e.dst == vertex_id]

    # ------------------------------------------------------------------
    # scope geometry helpers (usable before finalize)

    def scope_member_closure(self, scope: ScopeDecl) -> set:
        """All vertices instantiated with the scope: internals plus the
        boundary vertices of directly-nested scopes."""
        out = set(scope.internal_vertex_ids)
        for other in self.scopes.values():
            if other is scope:
                continue
            if other.internal_vertex_ids and other.internal_vertex_ids <= scope.internal_vertex_ids:
                for b in (other.ingress_vertex_id, other.egress_vertex_id):
                    if b:
                        out.add(b)
        return out

    def innermost_scope_of(self, vertex_id: str) -> Optional[str]:
        """Innermost scope that replicates this vertex (boundary vertices
        belong to their scope's parent region)."""
        best = None
        best_size = None
        for s in self.scopes.values():
            if vertex_id in (s.ingress_vertex_id, s.egress_vertex_id):
                continue
            if vertex_id in self.scope_member_closure(s):
                size = len(s.internal_vertex_ids)
                if best_size is None or size < best_size:
                    best, best_size = s.scope_id, size
        if best is not None:
            return best
        # A scope's own boundary vertices live in the scope's parent region.
        for s in self.scopes.values():
            if vertex_id in (s.ingress_vertex_id, s.egress_vertex_id):
                parent = self._enclosing_scope(s)
                return parent.scope_id if parent else None
        return None

    def _enclosing_scope(self, scope: ScopeDecl) -> Optional[ScopeDecl]:
        best = None
        best_size = None
        for other in self.scopes.values():
            if other is scope:
                continue
            if scope.internal_vertex_ids < other.internal_vertex_ids:
                size = len(other.internal_vertex_ids)
                if best_size is None or size < best_size:
                    best, best_size = other, size
        return best

    # ------------------------------------------------------------------
    # boundary synthesis

    def ensure_scope_endpoints(self) -> None:
        """Synthesize missing ingress/egress vertices, splicing the edges that
        cross each scope boundary through them.  Processes scopes outermost
        first so every crossing becomes a single-level hop.  Idempotent."""
        by_size = sorted(self.scopes.values(),
                         key=lambda s: -len(s.internal_vertex_ids))
        for scope in by_size:
            if scope.ingress_vertex_id is None:
                scope.ingress_vertex_id = self._synthesize_boundary(scope, ROLE_INGRESS)
            if scope.egress_vertex_id is None:
                scope.egress_vertex_id = self._synthesize_boundary(scope, ROLE_EGRESS)
        self._finalized = False

    def _innermost_loop_containing(self, edge: EdgeDecl) -> Optional[ScopeDecl]:
        best = None
        for scope in self.scopes.values():
            if scope.kind != LOOP:
                continue
            members = self.scope_member_closure(scope)
            if edge.src in members and (edge.dst in members
                                        or edge.dst == scope.ingress_vertex_id):
                if best is None or len(scope.internal_vertex_ids) < \
                        len(best.internal_vertex_ids):
                    best = scope
        return best

    def _synthesize_boundary(self, scope: ScopeDecl, role: str) -> str:
        vid = ("__in_" if role == ROLE_INGRESS else "__out_") + scope.scope_id
        self.add_vertex(VertexDecl(vid, logic=None, access=PURE, role=role))
        members = self.scope_member_closure(scope)
        fwd = self.ingress_forwarding.setdefault(scope.scope_id, {})
        efwd = self.egress_forwarding.setdefault(scope.scope_id, {})
        for edge in list(self.edges.values()):
            src_in = edge.src in members
            dst_in = edge.dst in members
            if role == ROLE_INGRESS:
                entering = (not src_in and dst_in and not edge.backward)
                # Backward edges splice through the ingress of the innermost
                # loop scope containing them.
                backward = (edge.backward and src_in and dst_in
                            and self._innermost_loop_containing(edge) is scope)
                if entering or backward:
                    inner_id = f"{edge.edge_id}@{scope.scope_id}.in"
                    self.add_edge(EdgeDecl(inner_id, vid, edge.dst,
                                           backward=False, partition=edge.partition))
                    edge.dst = vid
                    fwd[edge.edge_id] = inner_id
            else:
                leaving = (src_in and not dst_in and not edge.backward
                           and edge.dst != scope.ingress_vertex_id)
                if leaving:
                    inner_id = f"{edge.edge_id}@{scope.scope_id}.out"
                    self.add_edge(EdgeDecl(inner_id, edge.src, vid,
                                           backward=False, partition=PART_LOCAL))
                    edge.src = vid
                    efwd[inner_id] = edge.edge_id
        return vid

    # ------------------------------------------------------------------
    # validation

    def validate(self) -> ValidationReport:
        self.ensure_scope_endpoints()
        violations: list[str] = []
        self._check_references(violations)
        if not violations:
            self._check_nesting(violations)
            self._check_cycles(violations)
            self._check_boundaries(violations)
            self._check_kinds(violations)
        report = ValidationReport(violations)
        if report.ok:
            self._finalize()
        return report

    def _check_references(self, violations: list[str]) -> None:
        for e in self.edges.values():
            for endpoint in (e.src, e.dst):
                if endpoint not in self.vertices:
                    violations.append(f"edge {e.edge_id}: unknown vertex {endpoint!r}")
        for s in self.scopes.values():
            for v in s.internal_vertex_ids:
                if v not in self.vertices:
                    violations.append(f"scope {s.scope_id}: unknown member vertex {v!r}")

    def _check_nesting(self, violations: list[str]) -> None:
        scopes = list(self.scopes.values())
        for i, a in enumerate(scopes):
            for b in scopes[i + 1:]:
                sa, sb = a.internal_vertex_ids, b.internal_vertex_ids
                if sa & sb and not (sa < sb or sb < sa or sa == sb):
                    violations.append(
                        f"scopes {a.scope_id} and {b.scope_id} are not well-nested "
                        f"(overlap on {sorted(sa & sb)})"
                    )
                elif sa == sb:
                    violations.append(
                        f"scopes {a.scope_id} and {b.scope_id} declare identical members"
                    )

    def _check_cycles(self, violations: list[str]) -> None:
        # The forward-edge subgraph must be acyclic: any cycle must be closed
        # by a declared backward edge inside a loop scope.
        adjacency: dict[str, list[str]] = {v: [] for v in self.vertices}
        for e in self.edges.values():
            if not e.backward and e.src in adjacency:
                adjacency[e.src].append(e.dst)
        state: dict[str, int] = {}
        stack: list[str] = []

        def visit(v: str) -> Optional[list[str]]:
            state[v] = 1
            stack.append(v)
            for w in adjacency.get(v, ()):
                if state.get(w, 0) == 1:
                    return stack[stack.index(w):] + [w]
                if state.get(w, 0) == 0:
                    found = visit(w)
                    if found:
                        return found
            stack.pop()
            state[v] = 2
            return None

        for v in self.vertices:
            if state.get(v, 0) == 0:
                cycle = visit(v)
                if cycle:
                    violations.append(
                        "cycle outside any loop scope: " + " -> ".join(cycle)
                    )
                    break

        for e in self.edges.values():
            if not e.backward:
                continue
            scope = self._loop_scope_of_backward_edge(e)
            if scope is None:
                violations.append(
                    f"backward edge {e.edge_id} does not target the ingress of a loop scope"
                )
                continue
            members = self.scope_member_closure(scope)
            if e.src not in members:
                violations.append(
                    f"backward edge {e.edge_id} originates outside its loop scope {scope.scope_id}"
                )
            else:
                for inner in self.scopes.values():
                    if inner is scope:
                        continue
                    if e.src in inner.internal_vertex_ids and inner.internal_vertex_ids < scope.internal_vertex_ids:
                        violations.append(
                            f"backward edge {e.edge_id} originates inside inner scope "
                            f"{inner.scope_id} of loop scope {scope.scope_id}"
                        )

    def _loop_scope_of_backward_edge(self, e: EdgeDecl) -> Optional[ScopeDecl]:
        for s in self.scopes.values():
            if s.kind == LOOP and e.dst == s.ingress_vertex_id:
                return s
        return None

    def _check_boundaries(self, violations: list[str]) -> None:
        for e in self.edges.values():
            if e.src not in self.vertices or e.dst not in self.vertices:
                continue
            src_region = self.innermost_scope_of(e.src)
            dst_region = self.innermost_scope_of(e.dst)
            if e.backward:
                scope = self._loop_scope_of_backward_edge(e)
                if scope is not None and src_region != scope.scope_id:
                    violations.append(
                        f"backward edge {e.edge_id} must start in region of scope {scope.scope_id}"
                    )
                continue
            if src_region == dst_region:
                continue
            # Legal single-level crossings: into a scope through its own
            # ingress, out of a scope from its own ingress (forwarding) or
            # into its own egress.
            dst_scope = self.scopes.get(dst_region) if dst_region else None
            src_scope = self.scopes.get(src_region) if src_region else None
            entered = self._entered_scope(e)
            if entered is not None:
                parent = self._parent_region(entered)
                if src_region == parent:
                    continue
                if parent is not None and \
                        e.src == self.scopes[parent].ingress_vertex_id:
                    continue  # parent ingress forwards straight into a nested scope
            if dst_scope and e.src == dst_scope.ingress_vertex_id:
                continue  # ingress forwarding into its own scope
            if src_scope and e.dst == src_scope.egress_vertex_id:
                continue  # internal edge into the scope's own egress
            if dst_region is not None and self._region_contains(src_region, dst_region):
                violations.append(
                    f"edge {e.edge_id} enters scope {dst_region} bypassing its ingress"
                )
            elif src_region is not None and self._region_contains(dst_region, src_region):
                violations.append(
                    f"edge {e.edge_id} leaves scope {src_region} bypassing its egress"
                )
            else:
                violations.append(
                    f"edge {e.edge_id} crosses between unrelated scopes "
                    f"{src_region!r} and {dst_region!r}"
                )

    def _parent_region(self, scope: ScopeDecl) -> Optional[str]:
        parent = self._enclosing_scope(scope)
        return parent.scope_id if parent else None

    def _entered_scope(self, e: EdgeDecl) -> Optional[ScopeDecl]:
        for scope in self.scopes.values():
            if e.dst == scope.ingress_vertex_id:
                return scope
        return None

    def _region_contains(self, outer: Optional[str], inner: Optional[str]) -> bool:
        if outer is None:
            return True
        if inner is None:
            return False
        o = self.scopes[outer].internal_vertex_ids
        i = self.scopes[inner].internal_vertex_ids
        return i < o

    def _check_kinds(self, violations: list[str]) -> None:
        for s in self.scopes.values():
            has_backward = any(
                e.backward and e.dst == s.ingress_vertex_id for e in self.edges.values()
            )
            if s.kind == LOOP and not has_backward:
                violations.append(f"loop scope {s.scope_id} has no backward edge")
            if s.kind == BRANCH and has_backward:
                violations.append(f"branch scope {s.scope_id} has a backward edge")

    # ------------------------------------------------------------------
    # derived tables

    def _finalize(self) -> None:
        for scope in self.scopes.values():
            parent = self._enclosing_scope(scope)
            scope.parent_scope_id = parent.scope_id if parent else None
        for scope in self.scopes.values():
            depth, cur = 1, scope
            while cur.parent_scope_id is not None:
                depth += 1
                cur = self.scopes[cur.parent_scope_id]
            scope.depth = depth

        self.vertex_region = {v: self.innermost_scope_of(v) for v in self.vertices}
        self.scope_chain = {}
        for sid, scope in self.scopes.items():
            chain = [sid]
            cur = scope
            while cur.parent_scope_id is not None:
                chain.append(cur.parent_scope_id)
                cur = self.scopes[cur.parent_scope_id]
            self.scope_chain[sid] = tuple(reversed(chain))

        self.region_rank = self._compute_region_ranks()
        self._finalized = True

    def membership_chain(self, vertex_id: str) -> tuple:
        """Scope ids, outermost first, whose instances replicate this vertex.
        Its scope tag always has exactly this many elements."""
        region = self.vertex_region[vertex_id]
        return self.scope_chain[region] if region else ()

    def _compute_region_ranks(self) -> dict[Optional[str], dict[str, int]]:
        regions: dict[Optional[str], dict[str, int]] = {}
        region_ids: list[Optional[str]] = [None] + list(self.scopes.keys())
        for region in region_ids:
            items: dict[str, None] = {}
            for v, reg in self.vertex_region.items():
                if reg == region:
                    items[v] = None
            for sid, scope in self.scopes.items():
                if scope.parent_scope_id == region and sid != region:
                    items[sid] = None
            proj_edges: list[tuple[str, str]] = []
            for e in self.edges.values():
                if e.backward:
                    continue
                a = self._project_into_region(e.src, region)
                b = self._project_into_region(e.dst, region)
                if a is not None and b is not None and a != b:
                    proj_edges.append((a, b))
            regions[region] = _longest_path_ranks(list(items.keys()), proj_edges)
        return regions

    def _project_into_region(self, vertex_id: str, region: Optional[str]) -> Optional[str]:
        """Project a vertex onto the item representing it inside `region`:
        itself if directly in the region, the directly-nested scope containing
        it if deeper, or None if outside the region entirely."""
        reg = self.vertex_region.get(vertex_id)
        if reg == region:
            return vertex_id
        chain = self.scope_chain.get(reg, ()) if reg else ()
        if region is None:
            return chain[0] if chain else None
        if region in chain:
            idx = chain.index(region)
            if idx + 1 < len(chain):
                return chain[idx + 1]
        return None

    def rank_of(self, region: Optional[str], item_id: str) -> int:
        return self.region_rank.get(region, {}).get(item_id, 0)


def _longest_path_ranks(items: list[str], edges: list[tuple[str, str]]) -> dict[str, int]:
    indeg = {v: 0 for v in items}
    adj: dict[str, list[str]] = {v: [] for v in items}
    for a, b in edges:
        if a in adj and b in indeg:
            adj[a].append(b)
            indeg[b] += 1
    rank = {v: 0 for v in items}
    queue = [v for v in items if indeg[v] == 0]
    while queue:
        v = queue.pop()
        for w in adj[v]:
            rank[w] = max(rank[w], rank[v] + 1)
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return rank


def validate_dataflow(df: LogicalDataflow) -> ValidationReport:
    """Check every structural rule; returns ok or the list of violations.

    Missing scope boundary vertices are synthesized in place before checking,
    so user-built dataflows need not declare ingress/egress explicitly.
    """
    return df.validate()


# ----------------------------------------------------------------------
# scope-instance routing arithmetic


class IngressState:
    """Per-ingress-operator allocation state for scope-instance ordinals.

    A branch scope's ingress hands a fresh ordinal to every entering message.
    With P parallel ingress operators, operator i (0-based) allocates the
    strided sequence i+1, i+1+P, i+1+2P, ... so ordinals stay globally unique
    and the expected set is reconstructible from (i, local count).
    """

    def __init__(self, index: int = 0, stride: int = 1):
        if stride < 1 or index < 0 or index >= stride:
            raise ModelViolation(f"bad ingress allocation parameters ({index}, {stride})")
        self.index = index
        self.stride = stride
        self.allocated = 0
        self.known_instances: set[int] = set()

    def allocate(self) -> int:
        ordinal = self.index + 1 + self.allocated * self.stride
        self.allocated += 1
        return ordinal

    @property
    def largest_allocated(self) -> int:
        if self.allocated == 0:
            return 0
        return self.index + 1 + (self.allocated - 1) * self.stride


@dataclass(frozen=True)
class RouteResult:
    tag: ScopeTag
    instantiate: bool  # destination instance does not exist yet


def ingress_route(incoming_tag: ScopeTag, scope: ScopeDecl, via_backward_edge: bool,
                  ingress_state: IngressState) -> RouteResult:
    """Map an entering (or loop-backward) message to its destination instance.

    Branch: every entering message gets a fresh ordinal appended.  Loop entry
    goes to iteration 1; a backward message from iteration k goes to k+1.
    """
    if via_backward_edge:
        if scope.kind != LOOP:
            raise ModelViolation(
                f"backward entry into branch scope {scope.scope_id}"
            )
        if incoming_tag.depth != scope.depth:
            raise ModelViolation(
                f"backward message tag depth {incoming_tag.depth} != scope depth {scope.depth}"
            )
        dest = incoming_tag.advanced()
    else:
        if incoming_tag.depth != scope.depth - 1:
            raise ModelViolation(
                f"entering message tag depth {incoming_tag.depth} != "
                f"scope depth {scope.depth} - 1"
            )
        if scope.kind == BRANCH:
            dest = incoming_tag.extended(ingress_state.allocate())
            ingress_state.known_instances.add(dest.elements[-1])
            return RouteResult(dest, True)
        dest = incoming_tag.extended(1)
    ordinal = dest.elements[-1]
    fresh = ordinal not in ingress_state.known_instances
    if fresh:
        ingress_state.known_instances.add(ordinal)
    return RouteResult(dest, fresh)
