"""Scheduling policies and the hierarchical priority comparison.

A scope carries two comparators: the inter-instance comparator orders that
scope's instances against each other by tag, and the intra-instance comparator
orders the items directly inside one instance (plain vertices, plus nested
scopes treated as single virtual vertices).

Built-ins:

* ``fifo`` - orders nothing; the runtime falls back to arrival order.
* ``bfs``  - earlier instances first (lexical tag order); within an instance,
  items closer to the region entry first.
* ``dfs``  - later instances first (reverse lexical); within an instance,
  items farther from the region entry first (drive work downstream).
"""

from __future__ import annotations

from typing import Callable, Optional

from .dataflow import LogicalDataflow
from .errors import ModelViolation
from .tags import A_FIRST, B_FIRST, EQUAL, ScopeTag, lexical_compare

InterSiComparator = Callable[[ScopeTag, ScopeTag], int]
IntraSiComparator = Callable[[str, str], int]


def _fifo_tags(a: ScopeTag, b: ScopeTag) -> int:
    return EQUAL


def _bfs_tags(a: ScopeTag, b: ScopeTag) -> int:
    return lexical_compare(a, b)


def _dfs_tags(a: ScopeTag, b: ScopeTag) -> int:
    return -lexical_compare(a, b)


class PolicyRegistry:
    """Maps policy ids to comparator pairs, bound to a dataflow's geometry.

    Intra-instance comparators need the dataflow's topological ranks (how far
    each item sits from its region's entry), so they are built per (dataflow,
    region) and cached.
    """

    def __init__(self):
        self._inter: dict[str, InterSiComparator] = {}
        self._intra_factories: dict[str, Callable[[dict[str, int]], IntraSiComparator]] = {}
        self.register("fifo", _fifo_tags, lambda rank: (lambda a, b: EQUAL))
        self.register("bfs", _bfs_tags, _rank_order_factory(ascending=True))
        self.register("dfs", _dfs_tags, _rank_order_factory(ascending=False))

    def register(self, policy_id: str, inter: InterSiComparator,
                 intra_factory: Callable[[dict[str, int]], IntraSiComparator]) -> None:
        self._inter[policy_id] = inter
        self._intra_factories[policy_id] = intra_factory

    def known(self, policy_id: str) -> bool:
        return policy_id in self._inter

    def inter_si(self, policy_id: str) -> InterSiComparator:
        try:
            return self._inter[policy_id]
        except KeyError:
            raise ModelViolation(f"unknown policy id {policy_id!r}") from None

    def intra_si(self, policy_id: str, df: LogicalDataflow,
                 region: Optional[str]) -> IntraSiComparator:
        try:
            factory = self._intra_factories[policy_id]
        except KeyError:
            raise ModelViolation(f"unknown policy id {policy_id!r}") from None
        return factory(df.region_rank.get(region, {}))


def _rank_order_factory(ascending: bool):
    def build(rank: dict[str, int]) -> IntraSiComparator:
        def compare(a: str, b: str) -> int:
            ra, rb = rank.get(a, 0), rank.get(b, 0)
            if ra == rb:
                return EQUAL
            if ascending:
                return A_FIRST if ra < rb else B_FIRST
            return A_FIRST if ra > rb else B_FIRST
        return compare
    return build


DEFAULT_REGISTRY = PolicyRegistry()


def _policies_for_region(df: LogicalDataflow, region: Optional[str]) -> tuple[str, str]:
    if region is None:
        return "fifo", df.default_intra_policy
    scope = df.scopes[region]
    return scope.inter_si_policy, scope.intra_si_policy


def schedule_compare(a: tuple[str, ScopeTag], b: tuple[str, ScopeTag],
                     df: LogicalDataflow, registry: PolicyRegistry = DEFAULT_REGISTRY) -> int:
    """Order two instantiated vertices by walking their ancestor instances.

    Starting at depth 1: identical ancestors descend a level; different
    instances of the same scope are ordered by that scope's inter-instance
    comparator on the tag prefixes; instances of different scopes (or a scope
    against a plain vertex) are ordered by the common parent's intra-instance
    comparator, treating each scope as a virtual inner vertex.  Returns
    A_FIRST, B_FIRST, or EQUAL when no comparator distinguishes them.
    """
    va, ta = a
    vb, tb = b
    chain_a = df.membership_chain(va)
    chain_b = df.membership_chain(vb)
    if len(chain_a) != ta.depth or len(chain_b) != tb.depth:
        raise ModelViolation(
            f"tag depth does not match scope nesting for {va!r}/{vb!r}"
        )
    common = min(ta.depth, tb.depth)
    for d in range(1, common + 1):
        scope_a, scope_b = chain_a[d - 1], chain_b[d - 1]
        if scope_a == scope_b:
            if ta[d - 1] == tb[d - 1]:
                continue
            inter = registry.inter_si(df.scopes[scope_a].inter_si_policy)
            return inter(ta.prefix(d), tb.prefix(d))
        parent = chain_a[d - 2] if d >= 2 else None
        _, intra_policy = _policies_for_region(df, parent)
        intra = registry.intra_si(intra_policy, df, parent)
        return intra(scope_a, scope_b)
    # All common ancestors coincide; compare within the shallower item's region.
    region = chain_a[common - 1] if common else None
    item_a = va if ta.depth == common else chain_a[common]
    item_b = vb if tb.depth == common else chain_b[common]
    if item_a == item_b:
        return EQUAL
    _, intra_policy = _policies_for_region(df, region)
    intra = registry.intra_si(intra_policy, df, region)
    return intra(item_a, item_b)
