"""Canonical LR(1) tables, incremental parsing, and accept sequences.

Canonical LR(1) is the default because its action rows have the immediate
error detection property: an entry for a terminal exists exactly when that
terminal can validly continue some sentence from the current state, so the
acceptable-terminal set is one row scan. The optional LALR(1) mode merges
states by core; its merged lookaheads break that property for reduce
entries, so acceptable terminals are found by simulating reduces per
terminal on a scratch copy of the stack.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import LrConflictError, ParseError
from .grammar import Grammar
from .lexer import LexToken, PartialParseResult, RemainderCase

END = "$end"
_AUGMENTED = "$accept"

# Actions: ("s", state) shift, ("r", production index) reduce, ("acc",)
Action = tuple


@dataclass(frozen=True)
class Conflict:
    state: int
    terminal: str
    actions: tuple[Action, ...]
    items: tuple[str, ...]

    def describe(self) -> str:
        kinds = "/".join(a[0] for a in self.actions)
        return f"state {self.state} has {kinds} conflict ({', '.join(self.items)})"


@dataclass(frozen=True)
class LrTable:
    flavor: str  # "lr1" | "lalr1"
    productions: tuple[tuple[str, tuple[str, ...]], ...]  # [0] is augmented
    actions: tuple[dict[str, Action], ...]
    gotos: tuple[dict[str, int], ...]
    terminals: frozenset[str]
    n_states: int

    @property
    def start_state(self) -> int:
        return 0


def _first_sets(grammar: Grammar, terminals: frozenset[str]):
    first: dict[str, set[str]] = {t: {t} for t in terminals}
    nullable: set[str] = set()
    for p in grammar.rules:
        first.setdefault(p.lhs, set())
    changed = True
    while changed:
        changed = False
        for p in grammar.rules:
            f = first[p.lhs]
            before = len(f), p.lhs in nullable
            all_nullable = True
            for sym in p.rhs:
                f.update(first.get(sym, set()) - {None})
                if sym not in nullable:
                    all_nullable = False
                    break
            if all_nullable and p.lhs not in nullable:
                nullable.add(p.lhs)
            if (len(f), p.lhs in nullable) != before:
                changed = True
    return first, nullable


def _first_of_seq(seq, lookahead: str, first, nullable) -> set[str]:
    out: set[str] = set()
    for sym in seq:
        out.update(first.get(sym, {sym}))
        if sym not in nullable:
            return out
    out.add(lookahead)
    return out


def build_tables(grammar: Grammar, flavor: str = "lr1") -> LrTable:
    """Build canonical LR(1) (or core-merged LALR(1)) parse tables.

    State numbering is a breadth-first walk with sorted transition symbols,
    so identical grammars always produce identical tables.
    """
    if flavor not in ("lr1", "lalr1"):
        raise ValueError(f"unknown parser flavor {flavor!r}")
    terminals = frozenset(t.name for t in grammar.terminals if t.name not in grammar.ignore_set)
    productions: list[tuple[str, tuple[str, ...]]] = [(_AUGMENTED, (grammar.start,))]
    for p in grammar.rules:
        productions.append((p.lhs, p.rhs))
    by_lhs: dict[str, list[int]] = {}
    for i, (lhs, _) in enumerate(productions):
        by_lhs.setdefault(lhs, []).append(i)

    first, nullable = _first_sets(grammar, terminals)

    def closure(kernel: frozenset) -> frozenset:
        items = set(kernel)
        queue = deque(kernel)
        while queue:
            prod, dot, la = queue.popleft()
            rhs = productions[prod][1]
            if dot >= len(rhs):
                continue
            nxt = rhs[dot]
            if nxt in terminals:
                continue
            follow = _first_of_seq(rhs[dot + 1 :], la, first, nullable)
            for q in by_lhs.get(nxt, ()):
                for la2 in follow:
                    item = (q, 0, la2)
                    if item not in items:
                        items.add(item)
                        queue.append(item)
        return frozenset(items)

    start_kernel = frozenset({(0, 0, END)})
    kernels: dict[frozenset, int] = {start_kernel: 0}
    closures: list[frozenset] = [closure(start_kernel)]
    transitions: list[dict[str, int]] = []
    queue = deque([0])
    while queue:
        sid = queue.popleft()
        items = closures[sid]
        moves: dict[str, set] = {}
        for prod, dot, la in items:
            rhs = productions[prod][1]
            if dot < len(rhs):
                moves.setdefault(rhs[dot], set()).add((prod, dot + 1, la))
        row: dict[str, int] = {}
        for sym in sorted(moves):
            kernel = frozenset(moves[sym])
            tid = kernels.get(kernel)
            if tid is None:
                tid = len(closures)
                kernels[kernel] = tid
                closures.append(closure(kernel))
                queue.append(tid)
            row[sym] = tid
        transitions.append(row)

    if flavor == "lalr1":
        closures, transitions = _merge_cores(closures, transitions)

    def item_str(item) -> str:
        prod, dot, la = item
        lhs, rhs = productions[prod]
        body = " ".join((*rhs[:dot], ".", *rhs[dot:]))
        return f"[{lhs} -> {body}, {la}]"

    actions: list[dict[str, Action]] = []
    gotos: list[dict[str, int]] = []
    conflicts: list[Conflict] = []
    for sid, items in enumerate(closures):
        act: dict[str, Action] = {}
        goto: dict[str, int] = {}
        for sym, tid in transitions[sid].items():
            if sym in terminals:
                act[sym] = ("s", tid)
            else:
                goto[sym] = tid
        for prod, dot, la in sorted(items):
            lhs, rhs = productions[prod]
            if dot != len(rhs):
                continue
            new: Action = ("acc",) if prod == 0 else ("r", prod)
            old = act.get(la)
            if old is not None and old != new:
                related = tuple(
                    item_str(i)
                    for i in sorted(items)
                    if i[2] == la or (i[1] < len(productions[i[0]][1]))
                )
                conflicts.append(Conflict(sid, la, (old, new), related[:6]))
            else:
                act[la] = new
        actions.append(act)
        gotos.append(goto)
    if conflicts:
        raise LrConflictError(conflicts)
    return LrTable(
        flavor=flavor,
        productions=tuple(productions),
        actions=tuple(actions),
        gotos=tuple(gotos),
        terminals=terminals,
        n_states=len(closures),
    )


def _merge_cores(closures, transitions):
    def core_of(items):
        return frozenset((p, d) for p, d, _ in items)

    merged_ids: dict[frozenset, int] = {}
    mapping: list[int] = []
    for items in closures:
        core = core_of(items)
        if core not in merged_ids:
            merged_ids[core] = len(merged_ids)
        mapping.append(merged_ids[core])
    n = len(merged_ids)
    merged_sets: list[set] = [set() for _ in range(n)]
    merged_trans: list[dict[str, int]] = [dict() for _ in range(n)]
    for sid, items in enumerate(closures):
        mid = mapping[sid]
        merged_sets[mid].update(items)
        for sym, tid in transitions[sid].items():
            merged_trans[mid][sym] = mapping[tid]
    return [frozenset(s) for s in merged_sets], merged_trans


# --------------------------------------------------------------------------
# Parsing


class ParserStack:
    """LR state stack; bottom is always the start state."""

    __slots__ = ("states",)

    def __init__(self, states=None):
        self.states = list(states) if states is not None else [0]

    def copy(self) -> "ParserStack":
        return ParserStack(self.states)

    def snapshot(self) -> tuple[int, ...]:
        return tuple(self.states)

    @property
    def top(self) -> int:
        return self.states[-1]


def _shift(table: LrTable, stack: list[int], terminal: str) -> bool:
    """Apply reduces then shift ``terminal``; False if it hits an error."""
    while True:
        action = table.actions[stack[-1]].get(terminal)
        if action is None:
            return False
        kind = action[0]
        if kind == "s":
            stack.append(action[1])
            return True
        if kind == "acc":
            return terminal == END
        lhs, rhs = table.productions[action[1]]
        if len(rhs):
            del stack[-len(rhs) :]
        goto = table.gotos[stack[-1]].get(lhs)
        if goto is None:
            return False
        stack.append(goto)


def accept_terminals(table: LrTable, stack: ParserStack) -> frozenset[str]:
    """Terminals that can validly follow the viable prefix on the stack.

    O(|Γ|) for canonical LR(1): the action row is exact. LALR rows can hold
    reduce entries for invalid lookaheads, so that mode simulates reduces.
    """
    if table.flavor == "lr1":
        return frozenset(table.actions[stack.top].keys())
    out = set()
    for terminal in (*table.terminals, END):
        scratch = list(stack.states)
        if _shift(table, scratch, terminal):
            out.add(terminal)
    return frozenset(out)


@dataclass(frozen=True)
class Snapshot:
    states: tuple[int, ...]
    a0: frozenset[str]
    a1: frozenset[str]


class StateCache:
    """Per-session map from token-text prefixes to parser snapshots."""

    def __init__(self):
        self.entries: dict[tuple[str, ...], Snapshot] = {}

    def longest_prefix(self, texts: tuple[str, ...]) -> int:
        for length in range(len(texts), 0, -1):
            if texts[:length] in self.entries:
                return length
        return 0

    def get(self, texts: tuple[str, ...]) -> Snapshot:
        return self.entries[texts]

    def put(self, texts: tuple[str, ...], snap: Snapshot) -> None:
        self.entries[texts] = snap


@dataclass(frozen=True)
class IncrementalParse:
    stack: ParserStack
    a0: frozenset[str]
    a1: frozenset[str]
    final_shift_failed: bool
    tokens_parsed: int  # tokens actually fed this call (cache misses)


def parse_incremental(
    table: LrTable, cache: StateCache | None, tokens
) -> IncrementalParse:
    """Parse lexed tokens, reusing the longest cached prefix.

    Returns the stack after all tokens plus A1 (acceptable terminals after
    all tokens) and A0 (after all but the last). The result is identical to
    a from-scratch parse. A token other than the last hitting an error
    action raises :class:`ParseError` — the lexically fixed prefix is not a
    valid partial sentence. The *last* token failing to shift is not an
    error: the text it covers is the remainder, whose terminal type may
    simply change, so A1 comes back empty and the stack stays before it.
    """
    texts = tuple(t.text for t in tokens)
    start = 0
    stack = ParserStack()
    a0: frozenset[str] = frozenset()
    a1 = accept_terminals(table, stack)
    if cache is not None:
        start = cache.longest_prefix(texts)
        if start:
            snap = cache.get(texts[:start])
            stack = ParserStack(snap.states)
            a0, a1 = snap.a0, snap.a1
    parsed = 0
    for i in range(start, len(texts)):
        token = tokens[i]
        scratch = list(stack.states)
        ok = _shift(table, scratch, token.terminal)
        if not ok:
            if i == len(texts) - 1:
                return IncrementalParse(stack, a1, frozenset(), True, parsed)
            raise ParseError(token.terminal, i, accept_terminals(table, stack))
        stack = ParserStack(scratch)
        parsed += 1
        a0, a1 = a1, accept_terminals(table, stack)
        if cache is not None:
            cache.put(texts[: i + 1], Snapshot(stack.snapshot(), a0, a1))
    return IncrementalParse(stack, a0, a1, False, parsed)


def parse_scratch(table: LrTable, tokens) -> IncrementalParse:
    return parse_incremental(table, None, tokens)


# --------------------------------------------------------------------------
# Accept sequences


def build_accept_sequences(
    parse: PartialParseResult,
    a0: frozenset[str],
    a1: frozenset[str],
    ignore_set: frozenset[str],
) -> frozenset[tuple[str, ...]]:
    """Terminal sequences that may legally follow the lexically fixed prefix.

    Complete-final-token case: the remainder may extend as its current type
    (2-length sequences through A1) or re-lex as a different type (1-length
    sequences from A0). Unlexed-suffix case: 1-length sequences from A1.
    Ignore terminals are reachable anywhere, so they contribute 1-length
    sequences, plus (remainder-type, ignore) pairs after a complete token.
    """
    a0 = a0 - {END}
    a1 = a1 - {END}
    seqs: set[tuple[str, ...]] = set()
    if parse.case is RemainderCase.UNLEXED_SUFFIX:
        seqs.update((t,) for t in a1)
    else:
        tf = parse.remainder_terminal
        assert tf is not None
        if tf in ignore_set:
            # The final token never reached the parser; both roles are the
            # accept set at the current state.
            a0 = a1
        seqs.update((tf, t) for t in a1)
        seqs.update((t,) for t in a0 if t != tf)
        seqs.update((tf, ig) for ig in ignore_set)
    seqs.update((ig,) for ig in ignore_set)
    return frozenset(seqs)
