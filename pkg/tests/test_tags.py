import pytest
from hypothesis import given
from hypothesis import strategies as st

from scopedflow.errors import ModelViolation
from scopedflow.tags import (A_FIRST, B_FIRST, EQUAL, ScopeTag, egress_strip,
                             lexical_compare)

tags = st.lists(st.integers(min_value=1, max_value=9), max_size=6).map(ScopeTag)


def test_strip_removes_last_element():
    assert egress_strip(ScopeTag([3, 2])) == ScopeTag([3])
    assert egress_strip(ScopeTag([1])) == ScopeTag([])
    assert egress_strip(ScopeTag([1, 2, 5])) == ScopeTag([1, 2])


def test_strip_empty_tag_is_violation():
    with pytest.raises(ModelViolation):
        egress_strip(ScopeTag([]))


def test_ordinals_must_be_positive():
    with pytest.raises(ModelViolation):
        ScopeTag([0])
    with pytest.raises(ModelViolation):
        ScopeTag([1, -2])


def test_depth_limit():
    ScopeTag([1] * 16)
    with pytest.raises(ModelViolation):
        ScopeTag([1] * 17)


def test_advanced_increments_last():
    assert ScopeTag([3, 2]).advanced() == ScopeTag([3, 3])


def test_lexical_compare_examples():
    assert lexical_compare(ScopeTag([1]), ScopeTag([2])) == A_FIRST
    assert lexical_compare(ScopeTag([2]), ScopeTag([1])) == B_FIRST
    assert lexical_compare(ScopeTag([1, 2]), ScopeTag([1, 2])) == EQUAL
    assert lexical_compare(ScopeTag([1]), ScopeTag([1, 1])) == A_FIRST


@given(tags)
def test_strip_after_extend_is_identity(tag):
    assert tag.extended(7).stripped() == tag


@given(tags, tags)
def test_lexical_compare_antisymmetric(a, b):
    assert lexical_compare(a, b) == -lexical_compare(b, a)


@given(tags, tags, tags)
def test_lexical_compare_transitive(a, b, c):
    if lexical_compare(a, b) == A_FIRST and lexical_compare(b, c) == A_FIRST:
        assert lexical_compare(a, c) == A_FIRST


def test_tag_is_immutable_and_hashable():
    t = ScopeTag([1, 2])
    with pytest.raises(AttributeError):
        t.elements = (3,)
    assert hash(t) == hash(ScopeTag([1, 2]))
