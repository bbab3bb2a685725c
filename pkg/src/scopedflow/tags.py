"""Scope tags: the ordinal chains that name scope-instance nesting.

A tag ``(s1, ..., sd)`` identifies the chain of scope instances a message or
operator belongs to; element ``sk`` picks the sk-th instance of the scope at
nesting depth ``k``.  Vertices outside every scope carry the empty tag.
"""

from __future__ import annotations

from typing import Iterable, Iterator

from .errors import ModelViolation

# Orderings returned by comparators and schedule_compare.
A_FIRST = -1
EQUAL = 0
B_FIRST = 1

MAX_DEPTH = 16


class ScopeTag:
    """Immutable sequence of scope-instance ordinals, compared lexically."""

    __slots__ = ("elements",)

    def __init__(self, elements: Iterable[int] = ()):
        elems = tuple(int(e) for e in elements)
        if len(elems) > MAX_DEPTH:
            raise ModelViolation(f"scope tag deeper than {MAX_DEPTH}: {elems}")
        for e in elems:
            if e < 1:
                raise ModelViolation(f"scope tag ordinals must be >= 1, got {elems}")
        object.__setattr__(self, "elements", elems)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("ScopeTag is immutable")

    @property
    def depth(self) -> int:
        return len(self.elements)

    def extended(self, ordinal: int) -> "ScopeTag":
        """Tag for entering one scope level deeper as instance `ordinal`."""
        return ScopeTag(self.elements + (ordinal,))

    def stripped(self) -> "ScopeTag":
        """Tag with the final element removed (leaving a scope)."""
        if not self.elements:
            raise ModelViolation("cannot strip the empty scope tag")
        return ScopeTag(self.elements[:-1])

    def advanced(self) -> "ScopeTag":
        """Tag for the next loop iteration: last ordinal incremented by one."""
        if not self.elements:
            raise ModelViolation("cannot advance the empty scope tag")
        return ScopeTag(self.elements[:-1] + (self.elements[-1] + 1,))

    def prefix(self, depth: int) -> "ScopeTag":
        return ScopeTag(self.elements[:depth])

    def is_prefix_of(self, other: "ScopeTag") -> bool:
        return other.elements[: len(self.elements)] == self.elements

    def __iter__(self) -> Iterator[int]:
        return iter(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, idx):
        return self.elements[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, ScopeTag) and self.elements == other.elements

    def __lt__(self, other: "ScopeTag") -> bool:
        return self.elements < other.elements

    def __le__(self, other: "ScopeTag") -> bool:
        return self.elements <= other.elements

    def __hash__(self) -> int:
        return hash(self.elements)

    def __repr__(self) -> str:
        return "<" + ",".join(str(e) for e in self.elements) + ">"


EMPTY_TAG = ScopeTag(())


def lexical_compare(a: ScopeTag, b: ScopeTag) -> int:
    """Lexical order on tags: smaller tag first (A_FIRST when a < b)."""
    if a.elements == b.elements:
        return EQUAL
    return A_FIRST if a.elements < b.elements else B_FIRST


def egress_strip(tag: ScopeTag) -> ScopeTag:
    """Remove the last tag element, as an egress vertex does for leaving messages."""
    return tag.stripped()
