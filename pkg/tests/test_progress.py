"""Progress-tracking state machines: per-operator EOS ledgers, branch-scope
instance accounting, and loop-iteration closure consensus."""

import pytest

from scopedflow.errors import EngineFault
from scopedflow.progress import (EOS_FIRE_AND_PROPAGATE, EOS_FIRE_COMPLETION,
                                 EOS_NONE, BranchEgressTracker,
                                 LoopEgressTracker, LoopIngressTracker,
                                 OperatorEosLedger, SiCountReport,
                                 branch_scope_progress, loop_scope_progress,
                                 on_eos, strided_ordinals)


class TestOperatorLedger:
    def test_two_edges_fire_on_second(self):
        ledger = OperatorEosLedger([("e1", 0), ("e2", 0)])
        assert on_eos(ledger, ("e1", 0), True) == EOS_NONE
        assert on_eos(ledger, ("e2", 0), True) == EOS_FIRE_AND_PROPAGATE

    def test_sink_fires_without_propagation(self):
        ledger = OperatorEosLedger([("e1", 0)])
        assert on_eos(ledger, ("e1", 0), False) == EOS_FIRE_COMPLETION

    def test_duplicate_eos_is_engine_fault(self):
        ledger = OperatorEosLedger([("e1", 0), ("e2", 0)])
        on_eos(ledger, ("e1", 0), True)
        with pytest.raises(EngineFault):
            on_eos(ledger, ("e1", 0), True)

    def test_unexpected_channel_is_engine_fault(self):
        ledger = OperatorEosLedger([("e1", 0)])
        with pytest.raises(EngineFault):
            ledger.record(("bogus", 3))


class TestBranchProgress:
    def test_single_ingress_expected_set(self):
        t = BranchEgressTracker("W", 1)
        t.record_report(SiCountReport("W", 0, "branch_count", 3))
        assert t.expected_sis() == [1, 2, 3]
        for si in (1, 2, 3):
            t.record_si_complete(si)
        assert branch_scope_progress(t)["complete"]

    def test_terminated_instance_counts_as_complete(self):
        t = BranchEgressTracker("W", 1)
        t.record_report(SiCountReport("W", 0, "branch_count", 3))
        t.record_si_complete(1)
        t.record_si_complete(3)
        assert not t.scope_complete()
        t.record_si_complete(2)  # termination reports completion the same way
        assert t.scope_complete()

    def test_strided_union_of_two_ingress_reports(self):
        # Ingress 0 spawned 3 locally, ingress 1 spawned 1: the expected set
        # is the strided union, matching a global recount.
        t = BranchEgressTracker("W", 2)
        t.record_report(SiCountReport("W", 0, "branch_count", 3))
        assert t.expected_sis() is None  # must wait for every ingress
        t.record_report(SiCountReport("W", 1, "branch_count", 1))
        expected = t.expected_sis()
        recount = sorted(strided_ordinals(0, 2, 3) + strided_ordinals(1, 2, 1))
        assert expected == recount == [1, 2, 3, 5]

    def test_unknown_ingress_index_is_engine_fault(self):
        t = BranchEgressTracker("W", 2)
        with pytest.raises(EngineFault):
            t.record_report(SiCountReport("W", 7, "branch_count", 1))


class TestLoopProgress:
    def test_single_ingress_three_iterations(self):
        # Iterations 1..3 carry data; iteration 3's backward stream is empty,
        # so closing it reports 3 as the final ordinal.
        ing = LoopIngressTracker("L", 0, 1)
        ing.record_data(0)  # entering data
        gossip = ing.local_close(0)
        assert ing.peer_close(**_strip(gossip)) == ("advance", 1)
        for k in (1, 2):
            ing.record_data(k)
            gossip = ing.local_close(k)
            assert ing.peer_close(**_strip(gossip)) == ("advance", k + 1)
        gossip = ing.local_close(3)  # no data seen for iteration 3
        assert ing.peer_close(**_strip(gossip)) == ("last", 3)

    def test_empty_first_iteration(self):
        ing = LoopIngressTracker("L", 0, 1)
        ing.record_data(0)
        gossip = ing.local_close(0)
        assert ing.peer_close(**_strip(gossip)) == ("advance", 1)
        gossip = ing.local_close(1)
        assert ing.peer_close(**_strip(gossip)) == ("last", 1)

    def test_two_ingress_disagree_then_agree(self):
        # Peer 1 saw no data for iteration 2 but peer 0 did: the iteration
        # advances; both see iteration 3 empty and it becomes final.
        a = LoopIngressTracker("L", 0, 2)
        b = LoopIngressTracker("L", 1, 2)
        a.record_data(2)
        ga = a.local_close(2)
        gb = b.local_close(2)
        for tracker in (a, b):
            assert tracker.peer_close(**_strip(ga)) is None
            assert tracker.peer_close(**_strip(gb)) == ("advance", 3)
        ga = a.local_close(3)
        gb = b.local_close(3)
        for tracker in (a, b):
            tracker.peer_close(**_strip(ga))
        assert a.peer_close(**_strip(gb)) == ("last", 3)

    def test_egress_needs_same_ordinal_from_all_ingress(self):
        eg = LoopEgressTracker("L", 2)
        eg.record_report(SiCountReport("L", 0, "loop_empty", 3))
        assert eg.final_count is None
        eg.record_report(SiCountReport("L", 1, "loop_empty", 4))
        assert eg.final_count is None
        eg.record_report(SiCountReport("L", 1, "loop_empty", 3))
        assert eg.final_count == 3
        assert loop_scope_progress(eg)["expected"] == [1, 2, 3]
        for k in (1, 2, 3):
            eg.record_si_complete(k)
        assert loop_scope_progress(eg)["complete"]

    def test_double_close_is_engine_fault(self):
        ing = LoopIngressTracker("L", 0, 1)
        ing.local_close(1)
        with pytest.raises(EngineFault):
            ing.local_close(1)


def _strip(gossip: dict) -> dict:
    return {"peer_index": gossip["index"], "iteration": gossip["iteration"],
            "empty": gossip["empty"]}
