"""Arithmetic over sets of Unicode scalar values, kept as sorted ranges."""

from __future__ import annotations

from bisect import bisect_right

MAX_CODEPOINT = 0x10FFFF

# A char set is a tuple of (lo, hi) pairs, inclusive, sorted and disjoint.
Ranges = tuple[tuple[int, int], ...]

FULL: Ranges = ((0, MAX_CODEPOINT),)
EMPTY: Ranges = ()


def normalize(pairs) -> Ranges:
    """Sort, clip, and merge overlapping or adjacent ranges."""
    items = sorted((lo, hi) for lo, hi in pairs if lo <= hi)
    out: list[tuple[int, int]] = []
    for lo, hi in items:
        lo = max(lo, 0)
        hi = min(hi, MAX_CODEPOINT)
        if lo > hi:
            continue
        if out and lo <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return tuple(out)


def single(ch: str) -> Ranges:
    cp = ord(ch)
    return ((cp, cp),)


def from_chars(chars) -> Ranges:
    return normalize((ord(c), ord(c)) for c in chars)


def union(a: Ranges, b: Ranges) -> Ranges:
    return normalize(list(a) + list(b))


def negate(a: Ranges) -> Ranges:
    out = []
    prev = 0
    for lo, hi in a:
        if lo > prev:
            out.append((prev, lo - 1))
        prev = hi + 1
    if prev <= MAX_CODEPOINT:
        out.append((prev, MAX_CODEPOINT))
    return tuple(out)


def contains(a: Ranges, cp: int) -> bool:
    # Binary search on range starts; a is sorted and disjoint.
    i = bisect_right(a, (cp, MAX_CODEPOINT + 1)) - 1
    return i >= 0 and a[i][0] <= cp <= a[i][1]


def size(a: Ranges) -> int:
    return sum(hi - lo + 1 for lo, hi in a)


def first_char(a: Ranges) -> str:
    if not a:
        raise ValueError("empty char set has no members")
    return chr(a[0][0])
