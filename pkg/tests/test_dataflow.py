"""Structural validation and scope-instance routing arithmetic."""

import pytest

from scopedflow.dataflow import (BRANCH, LOOP, EdgeDecl, IngressState,
                                 LogicalDataflow, ScopeDecl, VertexDecl,
                                 ingress_route, validate_dataflow)
from scopedflow.errors import ModelViolation
from scopedflow.tags import ScopeTag


def chain_df(*vertex_ids):
    df = LogicalDataflow()
    for v in vertex_ids:
        df.add_vertex(VertexDecl(v))
    for a, b in zip(vertex_ids, vertex_ids[1:]):
        df.add_edge(EdgeDecl(f"{a}->{b}", a, b))
    return df


def loop_scope_df():
    """A loop scope shaped like the canonical example: enter -> a -> b -> exit
    with a backward edge b -> (scope head)."""
    df = chain_df("src", "a", "b", "sink")
    df.add_edge(EdgeDecl("back", "b", "a", backward=True))
    df.add_scope(ScopeDecl("L", LOOP, internal_vertex_ids={"a", "b"}))
    return df


class TestValidation:
    def test_loop_scope_accepted(self):
        df = loop_scope_df()
        report = validate_dataflow(df)
        assert report.ok, report.violations
        scope = df.scopes["L"]
        assert scope.ingress_vertex_id and scope.egress_vertex_id
        assert scope.depth == 1

    def test_cycle_outside_scope_rejected(self):
        df = chain_df("a", "b")
        df.add_edge(EdgeDecl("b->a", "b", "a"))
        report = validate_dataflow(df)
        assert not report.ok
        assert any("cycle" in v for v in report.violations)

    def test_overlapping_scopes_rejected(self):
        df = chain_df("src", "a", "b", "c", "sink")
        df.add_scope(ScopeDecl("s1", BRANCH, internal_vertex_ids={"a", "b"}))
        df.add_scope(ScopeDecl("s2", BRANCH, internal_vertex_ids={"b", "c"}))
        report = validate_dataflow(df)
        assert not report.ok
        assert any("not well-nested" in v for v in report.violations)

    def test_backward_edge_not_into_ingress_rejected(self):
        # A marked backward edge whose target is a plain internal vertex of a
        # branch scope matches no loop ingress.
        df = chain_df("src", "a", "b", "sink")
        df.add_edge(EdgeDecl("back", "b", "a", backward=True))
        df.add_scope(ScopeDecl("S", BRANCH, internal_vertex_ids={"a", "b"}))
        report = validate_dataflow(df)
        assert not report.ok
        assert any("backward edge" in v for v in report.violations)

    def test_edge_bypassing_boundary_rejected(self):
        df = chain_df("src", "a", "b", "sink")
        df.add_scope(ScopeDecl("S", BRANCH, internal_vertex_ids={"a", "b"},
                               ingress_vertex_id="ing", egress_vertex_id="eg"))
        df.add_vertex(VertexDecl("ing"))
        df.add_vertex(VertexDecl("eg"))
        # src -> a enters the scope without passing through "ing".
        report = validate_dataflow(df)
        assert not report.ok
        assert any("bypass" in v or "crosses" in v for v in report.violations)

    def test_nesting_depths(self):
        df = chain_df("src", "a", "b", "c", "sink")
        df.add_edge(EdgeDecl("back", "b", "a", backward=True))
        df.add_scope(ScopeDecl("outer", BRANCH, internal_vertex_ids={"a", "b", "c"}))
        df.add_scope(ScopeDecl("inner", LOOP, internal_vertex_ids={"a", "b"}))
        report = validate_dataflow(df)
        assert report.ok, report.violations
        assert df.scopes["outer"].depth == 1
        assert df.scopes["inner"].depth == 2
        assert df.scopes["inner"].parent_scope_id == "outer"

    def test_kind_mismatch_rejected(self):
        df = chain_df("src", "a", "sink")
        df.add_scope(ScopeDecl("S", LOOP, internal_vertex_ids={"a"}))
        report = validate_dataflow(df)
        assert not report.ok
        assert any("no backward edge" in v for v in report.violations)


class TestIngressRoute:
    def make_scope(self, kind, depth=1):
        return ScopeDecl("S", kind, internal_vertex_ids={"x"}, depth=depth)

    def test_branch_fresh_ordinals(self):
        scope = self.make_scope(BRANCH)
        state = IngressState()
        first = ingress_route(ScopeTag(), scope, False, state)
        second = ingress_route(ScopeTag(), scope, False, state)
        assert first.tag == ScopeTag([1]) and first.instantiate
        assert second.tag == ScopeTag([2]) and second.instantiate

    def test_branch_ordinals_cover_1_to_n(self):
        scope = self.make_scope(BRANCH)
        state = IngressState()
        got = [ingress_route(ScopeTag(), scope, False, state).tag[-1]
               for _ in range(25)]
        assert got == list(range(1, 26))

    def test_strided_allocation_for_parallel_ingress(self):
        scope = self.make_scope(BRANCH)
        a, b = IngressState(0, 2), IngressState(1, 2)
        got_a = [ingress_route(ScopeTag(), scope, False, a).tag[-1] for _ in range(3)]
        got_b = [ingress_route(ScopeTag(), scope, False, b).tag[-1] for _ in range(2)]
        assert got_a == [1, 3, 5]
        assert got_b == [2, 4]

    def test_loop_forward_entry(self):
        scope = self.make_scope(LOOP, depth=2)
        state = IngressState()
        res = ingress_route(ScopeTag([3]), scope, False, state)
        assert res.tag == ScopeTag([3, 1]) and res.instantiate
        res2 = ingress_route(ScopeTag([3]), scope, False, state)
        assert res2.tag == ScopeTag([3, 1]) and not res2.instantiate

    def test_loop_backward_entry(self):
        scope = self.make_scope(LOOP, depth=2)
        state = IngressState()
        res = ingress_route(ScopeTag([3, 2]), scope, True, state)
        assert res.tag == ScopeTag([3, 3]) and res.instantiate

    def test_backward_into_branch_is_violation(self):
        scope = self.make_scope(BRANCH)
        with pytest.raises(ModelViolation):
            ingress_route(ScopeTag([1]), scope, True, IngressState())

    def test_depth_mismatch_is_violation(self):
        scope = self.make_scope(LOOP, depth=2)
        with pytest.raises(ModelViolation):
            ingress_route(ScopeTag([1, 1]), scope, False, IngressState())
