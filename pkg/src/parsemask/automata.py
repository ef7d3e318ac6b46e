"""DFA machinery: regex compilation, walks, and the partial-match primitives.

Each terminal compiles to its own DFA over a per-DFA partition of Unicode
scalar values into equivalence classes. A designated dead state absorbs
unmatched input so transitions are total; ``live`` marks states from which
some path still reaches a final state.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import deque
from dataclasses import dataclass

from . import charset, regex_ast
from .charset import Ranges
from .errors import DfaLimitError
from .regex_ast import Alt, CharClass, Concat, RegexNode, Repeat

DEFAULT_STATE_LIMIT = 100_000


class _NfaBuilder:
    """Thompson construction over range-labelled edges."""

    def __init__(self):
        self.eps: list[list[int]] = []
        self.edges: list[list[tuple[Ranges, int]]] = []

    def new_state(self) -> int:
        self.eps.append([])
        self.edges.append([])
        return len(self.eps) - 1

    def add_eps(self, a: int, b: int) -> None:
        self.eps[a].append(b)

    def add_edge(self, a: int, ranges: Ranges, b: int) -> None:
        self.edges[a].append((ranges, b))

    def build(self, node: RegexNode) -> tuple[int, int]:
        """Returns (start, accept) fragment for the node."""
        if isinstance(node, CharClass):
            s, t = self.new_state(), self.new_state()
            self.add_edge(s, node.ranges, t)
            return s, t
        if isinstance(node, Concat):
            s = self.new_state()
            cur = s
            for part in node.parts:
                ps, pt = self.build(part)
                self.add_eps(cur, ps)
                cur = pt
            t = self.new_state()
            self.add_eps(cur, t)
            return s, t
        if isinstance(node, Alt):
            s, t = self.new_state(), self.new_state()
            for option in node.options:
                os_, ot = self.build(option)
                self.add_eps(s, os_)
                self.add_eps(ot, t)
            return s, t
        if isinstance(node, Repeat):
            s = self.new_state()
            cur = s
            for _ in range(node.min):
                ps, pt = self.build(node.node)
                self.add_eps(cur, ps)
                cur = pt
            t = self.new_state()
            self.add_eps(cur, t)
            if node.max is None:
                ps, pt = self.build(node.node)
                self.add_eps(cur, ps)
                self.add_eps(pt, cur)
            else:
                for _ in range(node.max - node.min):
                    ps, pt = self.build(node.node)
                    self.add_eps(cur, ps)
                    nxt = self.new_state()
                    self.add_eps(pt, nxt)
                    self.add_eps(nxt, t)
                    cur = nxt
            return s, t
        raise TypeError(node)

    def closure(self, states: frozenset[int]) -> frozenset[int]:
        seen = set(states)
        stack = list(states)
        while stack:
            s = stack.pop()
            for t in self.eps[s]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return frozenset(seen)


def _alphabet_classes(all_ranges) -> list[int]:
    """Boundary codepoints splitting Unicode into equivalence classes.

    Returns sorted class start points; the interval [starts[i], starts[i+1])
    is class i. Codepoints below starts[0] or outside every edge range fall
    in classes too, but map to the dead state unless an edge covers them.
    """
    points = {0}
    for lo, hi in all_ranges:
        points.add(lo)
        points.add(hi + 1)
    points.discard(charset.MAX_CODEPOINT + 1)
    return sorted(points)


@dataclass(frozen=True)
class Dfa:
    """Deterministic automaton with total transitions and live-state info."""

    n_states: int
    start: int
    dead: int
    finals: frozenset[int]
    live: frozenset[int]
    class_starts: tuple[int, ...]
    # transitions[state][class] -> state
    transitions: tuple[tuple[int, ...], ...]

    def class_of(self, cp: int) -> int:
        return bisect_right(self.class_starts, cp) - 1

    def step(self, q: int, ch: str) -> int:
        return self.transitions[q][self.class_of(ord(ch))]

    def walk(self, q: int, text: str) -> int:
        """Extended transition over text; short-circuits at the dead state."""
        trans = self.transitions
        starts = self.class_starts
        dead = self.dead
        for ch in text:
            if q == dead:
                return dead
            q = trans[q][bisect_right(starts, ord(ch)) - 1]
        return q

    def is_live(self, q: int) -> bool:
        return q in self.live

    def is_final(self, q: int) -> bool:
        return q in self.finals

    def accepts(self, text: str) -> bool:
        return self.walk(self.start, text) in self.finals


def walk(dfa: Dfa, q: int, text: str) -> int:
    return dfa.walk(q, text)


def _subset_construction(
    builder: _NfaBuilder,
    starts: frozenset[int],
    accept_of: dict[int, int],
    state_limit: int,
) -> tuple[list[tuple[int, ...]], dict[int, set[int]], int, int, list[int]]:
    """Shared determinization for single- and multi-terminal NFAs.

    accept_of maps NFA accept states to a tag (terminal index). Returns
    (transitions, state tag sets, start id, dead id, class starts).
    """
    all_ranges = [r for edges in builder.edges for ranges, _ in edges for r in ranges]
    class_starts = _alphabet_classes(all_ranges)
    n_classes = len(class_starts)

    start_set = builder.closure(starts)
    ids: dict[frozenset[int], int] = {start_set: 0}
    order = [start_set]
    rows: list[tuple[int, ...]] = []
    tags: dict[int, set[int]] = {}
    dead_set: frozenset[int] = frozenset()
    queue = deque([start_set])
    while queue:
        current = queue.popleft()
        sid = ids[current]
        tags[sid] = {accept_of[s] for s in current if s in accept_of}
        # Move sets per class: intersect each outgoing edge with the class.
        move: list[set[int]] = [set() for _ in range(n_classes)]
        for s in current:
            for ranges, t in builder.edges[s]:
                for lo, hi in ranges:
                    i = bisect_right(class_starts, lo) - 1
                    while i < n_classes and class_starts[i] <= hi:
                        move[i].add(t)
                        i += 1
        row = []
        for i in range(n_classes):
            tgt = builder.closure(frozenset(move[i])) if move[i] else dead_set
            if tgt not in ids:
                ids[tgt] = len(order)
                order.append(tgt)
                queue.append(tgt)
                if len(order) > state_limit:
                    raise DfaLimitError(
                        f"DFA exceeds {state_limit} states; raise the limit "
                        "or simplify the terminal pattern"
                    )
            row.append(ids[tgt])
        rows.append(tuple(row))
    # The dead set may be unreachable in rare total patterns; materialize it.
    if dead_set not in ids:
        ids[dead_set] = len(order)
        order.append(dead_set)
        rows.append(tuple([ids[dead_set]] * n_classes))
        tags[ids[dead_set]] = set()
    assert len(rows) == len(order)
    return rows, tags, 0, ids[dead_set], class_starts


def _minimize(
    rows: list[tuple[int, ...]], labels: list, start: int, dead: int
) -> tuple[list[tuple[int, ...]], list, int, int]:
    """Moore partition refinement; states with equal labels may merge.

    Returns (rows, labels, start, dead) renumbered by a BFS from the start
    block so numbering is deterministic. The dead block always survives.
    """
    n = len(rows)
    n_classes = len(rows[0]) if rows else 0
    block: dict = {}
    part = []
    for q in range(n):
        part.append(block.setdefault(labels[q], len(block)))
    while True:
        sig_ids: dict = {}
        new_part = []
        for q in range(n):
            sig = (part[q], tuple(part[t] for t in rows[q]))
            new_part.append(sig_ids.setdefault(sig, len(sig_ids)))
        if len(sig_ids) == len(block):
            break
        block = sig_ids
        part = new_part

    # Renumber blocks: BFS from the start block, classes in order.
    remap: dict[int, int] = {part[start]: 0}
    order = [start]  # representative state per new id
    queue = deque([start])
    while queue:
        q = queue.popleft()
        for c in range(n_classes):
            t = rows[q][c]
            if part[t] not in remap:
                remap[part[t]] = len(remap)
                order.append(t)
                queue.append(t)
    if part[dead] not in remap:
        remap[part[dead]] = len(remap)
        order.append(dead)
    new_rows = [
        tuple(remap[part[rows[rep][c]]] for c in range(n_classes)) for rep in order
    ]
    new_labels = [labels[rep] for rep in order]
    return new_rows, new_labels, 0, remap[part[dead]]


def _live_states(rows, finals: set[int]) -> frozenset[int]:
    n = len(rows)
    reverse: list[set[int]] = [set() for _ in range(n)]
    for q, row in enumerate(rows):
        for t in row:
            reverse[t].add(q)
    live = set(finals)
    stack = list(finals)
    while stack:
        q = stack.pop()
        for p in reverse[q]:
            if p not in live:
                live.add(p)
                stack.append(p)
    return frozenset(live)


def regex_to_dfa(
    node: RegexNode,
    state_limit: int = DEFAULT_STATE_LIMIT,
    minimize: bool = True,
) -> Dfa:
    """Compile an AST to a DFA via NFA + subset construction.

    Minimization only affects state count (and so mask-store size); it can
    be disabled for debugging subset-construction output.
    """
    builder = _NfaBuilder()
    s, t = builder.build(node)
    rows, tags, start, dead, class_starts = _subset_construction(
        builder, frozenset([s]), {t: 0}, state_limit
    )
    labels = [bool(tags[q]) for q in range(len(rows))]
    if minimize:
        rows, labels, start, dead = _minimize(rows, labels, start, dead)
    finals = frozenset(q for q, is_final in enumerate(labels) if is_final)
    live = _live_states(rows, set(finals)) - {dead}
    return Dfa(
        n_states=len(rows),
        start=start,
        dead=dead,
        finals=finals,
        live=frozenset(live),
        class_starts=tuple(class_starts),
        transitions=tuple(rows),
    )


@dataclass(frozen=True)
class TerminalDfaSet:
    """Per-terminal DFAs plus a stable global index over all their states."""

    order: tuple[str, ...]
    dfas: dict[str, Dfa]
    offsets: dict[str, int]
    n_states: int

    @classmethod
    def compile(cls, terminals, state_limit: int = DEFAULT_STATE_LIMIT) -> "TerminalDfaSet":
        """terminals: iterable of (name, RegexNode) in grammar order."""
        order = []
        dfas = {}
        offsets = {}
        total = 0
        for name, ast in terminals:
            dfa = regex_to_dfa(ast, state_limit)
            order.append(name)
            dfas[name] = dfa
            offsets[name] = total
            total += dfa.n_states
        return cls(tuple(order), dfas, offsets, total)

    def __getitem__(self, name: str) -> Dfa:
        return self.dfas[name]

    def global_id(self, terminal: str, q: int) -> int:
        return self.offsets[terminal] + q

    def resolve(self, gid: int) -> tuple[str, int]:
        for name in reversed(self.order):
            off = self.offsets[name]
            if gid >= off:
                return name, gid - off
        raise IndexError(gid)


def dmatch(dfas: TerminalDfaSet, terminal: str, q: int, text: str, seq) -> bool:
    """DFA-walk partial match of ``text`` from state ``q`` of ``terminal``.

    True when (1) the full walk ends live, (2) a strict prefix reaches a
    final state and ``seq`` is empty, or (3) a prefix reaches a final state
    and the rest matches from the next terminal's start state.
    """
    dfa = dfas[terminal]
    state = q
    final_splits = []
    died_at = None
    for i, ch in enumerate(text):
        if state in dfa.finals:
            final_splits.append(i)
        state = dfa.transitions[state][dfa.class_of(ord(ch))]
        if state == dfa.dead:
            died_at = i + 1
            break
    if died_at is None:
        if state in dfa.live:
            return True  # condition 1
        if state in dfa.finals:
            final_splits.append(len(text))
    rest = tuple(seq)
    if not rest:
        # condition 2: some final split leaves a non-empty remainder
        return any(i < len(text) for i in final_splits)
    nxt = rest[0]
    return any(
        dmatch(dfas, nxt, dfas[nxt].start, text[i:], rest[1:]) for i in final_splits
    )


class PmatchOracle:
    """Partial match against concatenated terminal regexes.

    Implemented as an NFA simulation over the concatenation, independent of
    the per-terminal DFA walks in :func:`dmatch`, so their equivalence is a
    meaningful cross-check rather than a tautology.
    """

    def __init__(self, terminal_asts: dict[str, RegexNode]):
        self.asts = dict(terminal_asts)
        self._cache: dict[tuple[str, ...], tuple[_NfaBuilder, int, int]] = {}

    def _machine(self, seq: tuple[str, ...]):
        cached = self._cache.get(seq)
        if cached is None:
            node = Concat(tuple(self.asts[name] for name in seq))
            builder = _NfaBuilder()
            s, t = builder.build(node)
            cached = (builder, s, t)
            self._cache[seq] = cached
        return cached

    def pmatch(self, text: str, seq) -> bool:
        seq = tuple(seq)
        builder, start, accept = self._machine(seq)
        current = builder.closure(frozenset([start]))
        n = len(text)
        for i, ch in enumerate(text):
            if accept in current and i < n:
                return True  # a strict prefix is in the language
            cp = ord(ch)
            moved = set()
            for s in current:
                for ranges, t in builder.edges[s]:
                    if charset.contains(ranges, cp):
                        moved.add(t)
            if not moved:
                return False
            current = builder.closure(frozenset(moved))
        # Thompson NFAs have no dead states: a non-empty state set means
        # some extension reaches the accept state.
        return bool(current)


@dataclass(frozen=True)
class LexerScanner:
    """Single combined DFA over every terminal, for maximal-munch scans."""

    dfa: Dfa
    # winner[state] -> terminal index chosen among finals at that state
    winner: tuple[int, ...]
    names: tuple[str, ...]

    @classmethod
    def compile(
        cls,
        terminals,
        state_limit: int = DEFAULT_STATE_LIMIT,
        minimize: bool = True,
    ) -> "LexerScanner":
        """terminals: iterable of (name, ast, priority, is_ignore)."""
        builder = _NfaBuilder()
        starts = set()
        accept_of = {}
        meta = []
        names = []
        for idx, (name, ast, priority, is_ignore) in enumerate(terminals):
            s, t = builder.build(ast)
            starts.add(s)
            accept_of[t] = idx
            meta.append((priority, is_ignore))
            names.append(name)
        rows, tags, start, dead, class_starts = _subset_construction(
            builder, frozenset(starts), accept_of, state_limit
        )
        labels = [frozenset(tags[q]) for q in range(len(rows))]
        if minimize:
            rows, labels, start, dead = _minimize(rows, labels, start, dead)
        finals = frozenset(q for q, tg in enumerate(labels) if tg)
        live = _live_states(rows, set(finals)) - {dead}

        def best(candidates: frozenset[int]) -> int:
            # priority desc, then non-ignore over ignore, then declaration order
            return min(
                candidates, key=lambda i: (-meta[i][0], 1 if meta[i][1] else 0, i)
            )

        winner = tuple(best(labels[q]) if labels[q] else -1 for q in range(len(rows)))
        dfa = Dfa(
            n_states=len(rows),
            start=start,
            dead=dead,
            finals=finals,
            live=frozenset(live),
            class_starts=tuple(class_starts),
            transitions=tuple(rows),
        )
        return cls(dfa=dfa, winner=winner, names=tuple(names))

    def scan(self, text: str, pos: int) -> tuple[int, int, bool]:
        """Maximal-munch scan from ``pos``.

        Returns (end offset of the longest complete match or -1, index of
        the winning terminal or -1, whether the walk was still live at end
        of input — i.e. the whole suffix could grow into a longer token).
        """
        dfa = self.dfa
        trans = dfa.transitions
        starts = dfa.class_starts
        finals = dfa.finals
        q = dfa.start
        best_end = -1
        best_terminal = -1
        i = pos
        n = len(text)
        while i < n:
            q = trans[q][bisect_right(starts, ord(text[i])) - 1]
            if q == dfa.dead:
                return best_end, best_terminal, False
            i += 1
            if q in finals:
                best_end = i
                best_terminal = self.winner[q]
        return best_end, best_terminal, True
