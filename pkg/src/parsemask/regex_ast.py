"""Regex subset used for terminal patterns.

Supports literals, character classes with ranges and negation, ``.``,
alternation, grouping (capturing and ``(?:``), and the quantifiers
``* + ? {m} {m,} {m,n}`` (lazy variants accepted, same language).
Backreferences, lookaround, and anchors are rejected: the lexer supplies
anchoring, so patterns always describe whole-token languages.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from . import charset
from .charset import Ranges
from .errors import RegexSyntaxError

_CLASS_SHORTHANDS: dict[str, Ranges] = {
    "d": charset.normalize([(0x30, 0x39)]),
    "w": charset.normalize([(0x30, 0x39), (0x41, 0x5A), (0x61, 0x7A), (0x5F, 0x5F)]),
    "s": charset.from_chars(" \t\n\r\f\v"),
}
_SIMPLE_ESCAPES = {
    "n": "\n",
    "r": "\r",
    "t": "\t",
    "f": "\f",
    "v": "\v",
    "a": "\a",
    "0": "\0",
}
# '.' matches any scalar value except newline unless the s flag is set.
_DOT = charset.negate(charset.single("\n"))


class RegexNode:
    __slots__ = ()


@dataclass(frozen=True)
class CharClass(RegexNode):
    """One character drawn from a set of scalar ranges."""

    ranges: Ranges


@dataclass(frozen=True)
class Concat(RegexNode):
    parts: tuple[RegexNode, ...]


@dataclass(frozen=True)
class Alt(RegexNode):
    options: tuple[RegexNode, ...]


@dataclass(frozen=True)
class Repeat(RegexNode):
    """min..max copies of node; max None means unbounded."""

    node: RegexNode
    min: int
    max: int | None


EPSILON = Concat(())


def literal(text: str, case_insensitive: bool = False) -> RegexNode:
    """AST matching exactly ``text`` (or its case variants)."""
    parts = []
    for ch in text:
        if case_insensitive:
            parts.append(CharClass(_ci_ranges(ch)))
        else:
            parts.append(CharClass(charset.single(ch)))
    return Concat(tuple(parts))


def _ci_ranges(ch: str) -> Ranges:
    variants = {ch}
    for v in (ch.lower(), ch.upper()):
        if len(v) == 1:
            variants.add(v)
    return charset.from_chars(variants)


def _expand_ci(ranges: Ranges) -> Ranges:
    # Per-codepoint case folding; good enough for the ASCII-centric
    # terminal patterns this engine targets.
    extra: list[tuple[int, int]] = []
    for lo, hi in ranges:
        if hi - lo > 0x2000:
            continue  # huge ranges are effectively case-closed already
        for cp in range(lo, hi + 1):
            for v in (chr(cp).lower(), chr(cp).upper()):
                if len(v) == 1 and not charset.contains(ranges, ord(v)):
                    extra.append((ord(v), ord(v)))
    return charset.union(ranges, charset.normalize(extra)) if extra else ranges


class _Parser:
    def __init__(self, pattern: str, ci: bool, dotall: bool):
        self.src = pattern
        self.pos = 0
        self.ci = ci
        self.dotall = dotall

    def error(self, message: str) -> RegexSyntaxError:
        return RegexSyntaxError(message, self.src, self.pos)

    def peek(self) -> str | None:
        return self.src[self.pos] if self.pos < len(self.src) else None

    def take(self) -> str:
        ch = self.src[self.pos]
        self.pos += 1
        return ch

    def parse(self) -> RegexNode:
        node = self.alternation()
        if self.pos != len(self.src):
            raise self.error(f"unexpected {self.src[self.pos]!r}")
        return node

    def alternation(self) -> RegexNode:
        options = [self.concat()]
        while self.peek() == "|":
            self.take()
            options.append(self.concat())
        if len(options) == 1:
            return options[0]
        return Alt(tuple(options))

    def concat(self) -> RegexNode:
        parts: list[RegexNode] = []
        while (ch := self.peek()) is not None and ch not in "|)":
            parts.append(self.repeatable())
        if len(parts) == 1:
            return parts[0]
        return Concat(tuple(parts))

    def repeatable(self) -> RegexNode:
        node = self.atom()
        while (ch := self.peek()) is not None and ch in "*+?{":
            if ch == "{":
                bounds = self._try_counted()
                if bounds is None:
                    break  # literal brace, already consumed as atom? no: re-peek
                lo, hi = bounds
                node = Repeat(node, lo, hi)
            else:
                self.take()
                node = {
                    "*": Repeat(node, 0, None),
                    "+": Repeat(node, 1, None),
                    "?": Repeat(node, 0, 1),
                }[ch]
            if self.peek() == "?":  # lazy quantifier: same language
                self.take()
        return node

    def _try_counted(self) -> tuple[int, int | None] | None:
        start = self.pos
        self.take()  # '{'
        digits = ""
        while (c := self.peek()) is not None and c.isdigit():
            digits += self.take()
        if self.peek() == "}" and digits:
            self.take()
            n = int(digits)
            return n, n
        if self.peek() == "," and digits:
            self.take()
            hi_digits = ""
            while (c := self.peek()) is not None and c.isdigit():
                hi_digits += self.take()
            if self.peek() == "}":
                self.take()
                hi = int(hi_digits) if hi_digits else None
                lo = int(digits)
                if hi is not None and hi < lo:
                    raise self.error("bad repeat bounds")
                return lo, hi
        # Not a counted repeat; treat '{' as a literal character.
        self.pos = start
        return None

    def atom(self) -> RegexNode:
        ch = self.peek()
        if ch is None:
            raise self.error("unexpected end of pattern")
        if ch == "(":
            return self._group()
        if ch == "[":
            return self._char_class()
        if ch == ".":
            self.take()
            return CharClass(charset.FULL if self.dotall else _DOT)
        if ch in "^$":
            raise self.error("anchors are not supported")
        if ch in "*+?":
            raise self.error("quantifier with nothing to repeat")
        if ch == "\\":
            return self._escape(in_class=False)
        if ch == "{":
            bounds = self._try_counted()
            if bounds is not None:
                raise self.error("counted repeat with nothing to repeat")
            self.take()
            return self._char_atom("{")
        self.take()
        return self._char_atom(ch)

    def _char_atom(self, ch: str) -> RegexNode:
        if self.ci:
            return CharClass(_ci_ranges(ch))
        return CharClass(charset.single(ch))

    def _group(self) -> RegexNode:
        self.take()  # '('
        if self.peek() == "?":
            self.take()
            mark = self.peek()
            if mark == ":":
                self.take()
            elif mark in ("=", "!", "<"):
                raise self.error("lookaround is not supported")
            elif mark == "P":
                raise self.error("named groups are not supported")
            else:
                raise self.error("unsupported group flag")
        node = self.alternation()
        if self.peek() != ")":
            raise self.error("unterminated group")
        self.take()
        return node

    def _escape(self, in_class: bool) -> RegexNode:
        self.take()  # backslash
        ch = self.peek()
        if ch is None:
            raise self.error("dangling backslash")
        self.take()
        if ch in "dws":
            return CharClass(_CLASS_SHORTHANDS[ch])
        if ch in "DWS":
            return CharClass(charset.negate(_CLASS_SHORTHANDS[ch.lower()]))
        if ch in "bBAZ":
            raise self.error("anchors are not supported")
        if ch.isdigit() and ch != "0":
            raise self.error("backreferences are not supported")
        if ch == "x":
            return self._char_atom(chr(self._hex(2)))
        if ch == "u":
            return self._char_atom(chr(self._hex(4)))
        if ch == "U":
            return self._char_atom(chr(self._hex(8)))
        if ch in _SIMPLE_ESCAPES:
            return self._char_atom(_SIMPLE_ESCAPES[ch])
        return self._char_atom(ch)

    def _hex(self, n: int) -> int:
        digits = self.src[self.pos : self.pos + n]
        if len(digits) < n or any(c not in "0123456789abcdefABCDEF" for c in digits):
            raise self.error(f"expected {n} hex digits")
        self.pos += n
        return int(digits, 16)

    def _char_class(self) -> RegexNode:
        self.take()  # '['
        negated = False
        if self.peek() == "^":
            negated = True
            self.take()
        items: list[tuple[int, int]] = []
        first = True
        while True:
            ch = self.peek()
            if ch is None:
                raise self.error("unterminated character class")
            if ch == "]" and not first:
                self.take()
                break
            first = False
            if ch == "\\":
                node = self._escape(in_class=True)
                lo_ranges = node.ranges  # type: ignore[union-attr]
                if len(lo_ranges) == 1 and lo_ranges[0][0] == lo_ranges[0][1]:
                    lo_cp = lo_ranges[0][0]
                else:
                    items.extend(lo_ranges)
                    continue
            else:
                self.take()
                lo_cp = ord(ch)
            if self.peek() == "-" and self.src[self.pos + 1 : self.pos + 2] not in ("]", ""):
                self.take()
                hi_ch = self.peek()
                if hi_ch == "\\":
                    node = self._escape(in_class=True)
                    r = node.ranges  # type: ignore[union-attr]
                    if len(r) != 1 or r[0][0] != r[0][1]:
                        raise self.error("bad range endpoint")
                    hi_cp = r[0][0]
                else:
                    self.take()
                    hi_cp = ord(hi_ch)
                if hi_cp < lo_cp:
                    raise self.error("reversed character range")
                items.append((lo_cp, hi_cp))
            else:
                items.append((lo_cp, lo_cp))
        ranges = charset.normalize(items)
        if negated:
            ranges = charset.negate(ranges)
        elif self.ci:
            ranges = _expand_ci(ranges)
        if not ranges:
            raise self.error("empty character class")
        return CharClass(ranges)


def parse_regex(pattern: str, flags: str = "") -> RegexNode:
    """Compile pattern source into an AST; flags: ``i`` and ``s`` only."""
    for f in flags:
        if f not in "is":
            raise RegexSyntaxError(f"unsupported flag {f!r}", pattern, 0)
    return _Parser(pattern, ci="i" in flags, dotall="s" in flags).parse()


def nullable(node: RegexNode) -> bool:
    """True when the empty string is in the node's language."""
    if isinstance(node, CharClass):
        return False
    if isinstance(node, Concat):
        return all(nullable(p) for p in node.parts)
    if isinstance(node, Alt):
        return any(nullable(o) for o in node.options)
    if isinstance(node, Repeat):
        return node.min == 0 or nullable(node.node)
    raise TypeError(node)


def min_length(node: RegexNode) -> int | None:
    """Length of the shortest member, or None for an empty language."""
    if isinstance(node, CharClass):
        return 1 if node.ranges else None
    if isinstance(node, Concat):
        total = 0
        for p in node.parts:
            m = min_length(p)
            if m is None:
                return None
            total += m
        return total
    if isinstance(node, Alt):
        best = None
        for o in node.options:
            m = min_length(o)
            if m is not None and (best is None or m < best):
                best = m
        return best
    if isinstance(node, Repeat):
        m = min_length(node.node)
        if m is None:
            return None if node.min > 0 else 0
        return m * node.min
    raise TypeError(node)


def shortest_witness(node: RegexNode) -> str | None:
    """A concrete shortest member of the language, or None if empty."""
    if isinstance(node, CharClass):
        return charset.first_char(node.ranges) if node.ranges else None
    if isinstance(node, Concat):
        out = []
        for p in node.parts:
            w = shortest_witness(p)
            if w is None:
                return None
            out.append(w)
        return "".join(out)
    if isinstance(node, Alt):
        best = None
        for o in node.options:
            w = shortest_witness(o)
            if w is not None and (best is None or len(w) < len(best)):
                best = w
        return best
    if isinstance(node, Repeat):
        if node.min == 0:
            return ""
        w = shortest_witness(node.node)
        if w is None:
            return None
        return w * node.min
    raise TypeError(node)


def sample(node: RegexNode, rng, max_repeat: int = 4) -> str:
    """Draw a random member of the language (seeded by ``rng``)."""
    if isinstance(node, CharClass):
        lo, hi = node.ranges[rng.randrange(len(node.ranges))]
        return chr(rng.randint(lo, hi))
    if isinstance(node, Concat):
        return "".join(sample(p, rng, max_repeat) for p in node.parts)
    if isinstance(node, Alt):
        # Retry empty-language branches by falling back to a witness scan.
        order = list(node.options)
        rng.shuffle(order)
        for o in order:
            if min_length(o) is not None:
                return sample(o, rng, max_repeat)
        raise ValueError("empty language")
    if isinstance(node, Repeat):
        hi = node.max if node.max is not None else node.min + max_repeat
        hi = min(hi, node.min + max_repeat)
        n = rng.randint(node.min, max(node.min, hi))
        return "".join(sample(node.node, rng, max_repeat) for _ in range(n))
    raise TypeError(node)
