"""Independent ground truth: character-level prefix membership via Earley.

The grammar's terminals are expanded into character-level rules derived
straight from their regex ASTs (never from the lexer or the compiled
DFA walks), and ignored terminals become optional padding between tokens.
An Earley chart over the resulting grammar decides, for any string, whether
it can still extend to a full sentence; because every symbol is productive
after pruning, "some item survived the last character" is exactly prefix
membership.

This deliberately accepts *any* tokenization of the input, unlike the
engine's maximal-munch lexer, so it can catch lexer bugs. Shipped desk
grammars are verified (in the acceptance suite) to be free of divergence
between the two views over the test corpora.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import charset, regex_ast
from .automata import TerminalDfaSet
from .charset import Ranges
from .errors import OracleBoundError, ParsemaskError
from .grammar import Grammar
from .regex_ast import Alt, CharClass, Concat, RegexNode, Repeat

DEFAULT_BOUND = 4096


class _RuleBuilder:
    def __init__(self):
        self.nt_names: list[str] = []
        self.nt_ids: dict[str, int] = {}
        self.rules: list[tuple[int, tuple[int, ...]]] = []
        self.charsets: list[Ranges] = []
        self._cs_ids: dict[Ranges, int] = {}

    def nt(self, name: str) -> int:
        if name not in self.nt_ids:
            self.nt_ids[name] = len(self.nt_names)
            self.nt_names.append(name)
        return self.nt_ids[name]

    def fresh(self, hint: str) -> int:
        return self.nt(f"{hint}#{len(self.nt_names)}")

    def cs(self, ranges: Ranges) -> int:
        """Charset symbols are encoded as negative ints: -1-index."""
        if ranges not in self._cs_ids:
            self._cs_ids[ranges] = len(self.charsets)
            self.charsets.append(ranges)
        return -1 - self._cs_ids[ranges]

    def rule(self, lhs: int, rhs) -> None:
        self.rules.append((lhs, tuple(rhs)))

    def seq_of(self, node: RegexNode, hint: str) -> list[int]:
        if isinstance(node, CharClass):
            return [self.cs(node.ranges)]
        if isinstance(node, Concat):
            out: list[int] = []
            for p in node.parts:
                out.extend(self.seq_of(p, hint))
            return out
        if isinstance(node, Alt):
            name = self.fresh(hint)
            for option in node.options:
                self.rule(name, self.seq_of(option, hint))
            return [name]
        if isinstance(node, Repeat):
            inner = self.seq_of(node.node, hint)
            if node.max is None:
                star = self.fresh(hint)
                self.rule(star, ())
                self.rule(star, (star, *inner))
                return list(inner) * node.min + [star]
            out = list(inner) * node.min
            for _ in range(node.max - node.min):
                opt = self.fresh(hint)
                self.rule(opt, ())
                self.rule(opt, inner)
                out.append(opt)
            return out
        raise TypeError(node)


@dataclass(frozen=True)
class CharLevelGrammar:
    """CFG over single characters whose language equals the grammar's."""

    rules: tuple[tuple[int, tuple[int, ...]], ...]
    rules_by_lhs: tuple[tuple[int, ...], ...]
    charsets: tuple[Ranges, ...]
    root: int
    root_rule: int
    nt_names: tuple[str, ...]

    @classmethod
    def from_grammar(cls, grammar: Grammar, order_seed: int | None = None) -> "CharLevelGrammar":
        b = _RuleBuilder()
        root = b.nt("@root")
        pad = b.nt("@pad")

        term_nt: dict[str, int] = {}
        for t in grammar.terminals:
            if t.pattern is None:
                raise ParsemaskError(f"terminal {t.name!r} has no pattern")
            nt = b.nt(f"@t:{t.name}")
            term_nt[t.name] = nt
            b.rule(nt, b.seq_of(t.pattern, f"@t:{t.name}"))

        # Optional ignored padding between tokens (and leading/trailing).
        b.rule(pad, ())
        for name in sorted(grammar.ignore_set):
            b.rule(pad, (term_nt[name], pad))

        terminal_names = set(grammar.terminal_names)
        for p in grammar.rules:
            rhs: list[int] = []
            for sym in p.rhs:
                if sym in terminal_names:
                    rhs.extend((term_nt[sym], pad))
                else:
                    rhs.append(b.nt(sym))
            b.rule(b.nt(p.lhs), rhs)
        root_rhs = (pad, b.nt(grammar.start))
        b.rule(root, root_rhs)

        rules = b.rules
        # Drop rules that mention unproductive symbols: with every surviving
        # symbol productive, a non-empty Earley column means the consumed
        # prefix really extends to a sentence.
        productive: set[int] = set()
        changed = True
        while changed:
            changed = False
            for lhs, rhs in rules:
                if lhs not in productive and all(
                    s < 0 or s in productive for s in rhs
                ):
                    productive.add(lhs)
                    changed = True
        kept = [
            (lhs, rhs)
            for lhs, rhs in rules
            if lhs in productive and all(s < 0 or s in productive for s in rhs)
        ]
        if root not in productive:
            raise ParsemaskError("start symbol derives no terminal string")
        if order_seed is not None:
            rng = random.Random(order_seed)
            rng.shuffle(kept)
        root_rule = next(i for i, (lhs, _) in enumerate(kept) if lhs == root)
        by_lhs: list[list[int]] = [[] for _ in b.nt_names]
        for i, (lhs, _) in enumerate(kept):
            by_lhs[lhs].append(i)
        return cls(
            rules=tuple(kept),
            rules_by_lhs=tuple(tuple(x) for x in by_lhs),
            charsets=tuple(b.charsets),
            root=root,
            root_rule=root_rule,
            nt_names=tuple(b.nt_names),
        )


class _Column:
    __slots__ = ("items", "wait", "scans", "completed_null", "completed")

    def __init__(self):
        self.items: set[tuple[int, int, int]] = set()
        self.wait: dict[int, list[tuple[int, int, int]]] = {}
        self.scans: list[tuple[int, int, int, int]] = []  # rule, dot, origin, cs
        self.completed_null: set[int] = set()
        self.completed = False  # root completed spanning the whole input


class PrefixChart:
    """Earley chart with cheap append-and-roll-back extension.

    Columns are append-only: processing column ``i`` never mutates earlier
    columns, so probing a suffix is "advance, read, truncate".
    """

    def __init__(self, cg: CharLevelGrammar, text: str = ""):
        self.cg = cg
        self.cols: list[_Column] = []
        self.alive = True
        first = _Column()
        self._seed(first)
        self.cols.append(first)
        self._process(0)
        if text:
            self.advance(text)

    def _seed(self, col: _Column) -> None:
        col.items.add((self.cg.root_rule, 0, 0))

    def _process(self, index: int) -> None:
        cg = self.cg
        rules = cg.rules
        col = self.cols[index]
        agenda = list(col.items)
        items = col.items
        while agenda:
            rule_id, dot, origin = agenda.pop()
            lhs, rhs = rules[rule_id]
            if dot == len(rhs):
                if lhs == cg.root and origin == 0:
                    col.completed = True
                if origin == index:
                    col.completed_null.add(lhs)
                    waiters = col.wait.get(lhs, ())
                else:
                    waiters = self.cols[origin].wait.get(lhs, ())
                for w_rule, w_dot, w_origin in list(waiters):
                    nxt = (w_rule, w_dot + 1, w_origin)
                    if nxt not in items:
                        items.add(nxt)
                        agenda.append(nxt)
                continue
            sym = rhs[dot]
            if sym < 0:
                col.scans.append((rule_id, dot, origin, -1 - sym))
                continue
            bucket = col.wait.get(sym)
            if bucket is None:
                bucket = []
                col.wait[sym] = bucket
                for r in cg.rules_by_lhs[sym]:
                    fresh = (r, 0, index)
                    if fresh not in items:
                        items.add(fresh)
                        agenda.append(fresh)
            bucket.append((rule_id, dot, origin))
            if sym in col.completed_null:
                nxt = (rule_id, dot + 1, origin)
                if nxt not in items:
                    items.add(nxt)
                    agenda.append(nxt)

    def advance(self, text: str) -> None:
        for ch in text:
            if not self.alive:
                return
            cp = ord(ch)
            src = self.cols[-1]
            new = _Column()
            charsets = self.cg.charsets
            for rule_id, dot, origin, cs_id in src.scans:
                if charset.contains(charsets[cs_id], cp):
                    new.items.add((rule_id, dot + 1, origin))
            self.cols.append(new)
            if not new.items:
                self.alive = False
                return
            self._process(len(self.cols) - 1)

    def accepts(self) -> bool:
        return self.alive and self.cols[-1].completed

    def mark(self) -> tuple[int, bool]:
        return len(self.cols), self.alive

    def reset(self, mark: tuple[int, bool]) -> None:
        n, alive = mark
        del self.cols[n:]
        self.alive = alive

    def probe(self, suffix: str) -> tuple[bool, bool]:
        """(still a valid prefix, is a complete sentence) after ``suffix``."""
        mark = self.mark()
        self.advance(suffix)
        result = (self.alive, self.accepts())
        self.reset(mark)
        return result


def prefix_accepts(
    grammar: Grammar, text: str, bound: int = DEFAULT_BOUND, order_seed: int | None = None
) -> bool:
    """True iff ``text`` extends to a sentence of the grammar."""
    if len(text) > bound:
        raise OracleBoundError(f"oracle input of {len(text)} chars exceeds bound {bound}")
    chart = PrefixChart(CharLevelGrammar.from_grammar(grammar, order_seed), text)
    return chart.alive


def sentence_accepts(grammar: Grammar, text: str, bound: int = DEFAULT_BOUND) -> bool:
    if len(text) > bound:
        raise OracleBoundError(f"oracle input of {len(text)} chars exceeds bound {bound}")
    chart = PrefixChart(CharLevelGrammar.from_grammar(grammar), text)
    return chart.accepts()


def oracle_mask(
    grammar: Grammar,
    text: str,
    vocab,
    chart: PrefixChart | None = None,
    bound: int = DEFAULT_BOUND,
) -> frozenset[int]:
    """Exact valid-token set: indices whose surface keeps the text a prefix;
    EOS included iff the text is already a complete sentence."""
    if len(text) > bound:
        raise OracleBoundError(f"oracle input of {len(text)} chars exceeds bound {bound}")
    if chart is None:
        chart = PrefixChart(CharLevelGrammar.from_grammar(grammar), text)
    out = set()
    for i, surface in enumerate(vocab.tokens):
        if i == vocab.eos_index:
            if chart.accepts():
                out.add(i)
            continue
        alive, _ = chart.probe(surface)
        if alive:
            out.add(i)
    return frozenset(out)


# --------------------------------------------------------------------------
# Corpus generation


def _min_expansion_sizes(grammar: Grammar) -> dict[str, int]:
    sizes = {t.name: 1 for t in grammar.terminals}
    inf = float("inf")
    for p in grammar.rules:
        sizes.setdefault(p.lhs, inf)
    changed = True
    while changed:
        changed = False
        for p in grammar.rules:
            total = 0
            for sym in p.rhs:
                total += sizes.get(sym, inf)
            if total < sizes[p.lhs]:
                sizes[p.lhs] = total
                changed = True
    return sizes


def random_terminal_sentence(grammar: Grammar, rng: random.Random, budget: int = 48):
    """Random leftmost derivation; over budget, shortest expansions win."""
    sizes = _min_expansion_sizes(grammar)
    terminal_names = set(grammar.terminal_names)
    by_lhs: dict[str, list] = {}
    for p in grammar.rules:
        by_lhs.setdefault(p.lhs, []).append(p)
    out: list[str] = []
    stack = [grammar.start]
    spent = 0
    while stack:
        sym = stack.pop()
        if sym in terminal_names:
            out.append(sym)
            continue
        options = by_lhs[sym]
        spent += 1
        if spent > budget:
            best = min(options, key=lambda p: sum(sizes.get(s, 1) for s in p.rhs))
            choice = best
        else:
            choice = options[rng.randrange(len(options))]
        stack.extend(reversed(choice.rhs))
    return out


class _MunchChecker:
    """Longest-match simulation used only to keep sampled corpora inside
    the sublanguage where greedy lexing recovers the intended tokens."""

    def __init__(self, grammar: Grammar, dfas: TerminalDfaSet):
        self.grammar = grammar
        self.dfas = dfas
        order = {name: i for i, name in enumerate(dfas.order)}
        self.rank = {}
        for t in grammar.terminals:
            self.rank[t.name] = (-t.priority, 1 if t.name in grammar.ignore_set else 0, order[t.name])

    def next_token(self, text: str, pos: int):
        best_len = -1
        best_name = None
        for name in self.dfas.order:
            dfa = self.dfas[name]
            q = dfa.start
            i = pos
            last = -1
            while i < len(text):
                q = dfa.transitions[q][dfa.class_of(ord(text[i]))]
                if q == dfa.dead:
                    break
                i += 1
                if q in dfa.finals:
                    last = i
            if last < 0:
                continue
            length = last - pos
            if length > best_len or (
                length == best_len and self.rank[name] < self.rank[best_name]
            ):
                best_len = length
                best_name = name
        return best_len, best_name

    def tokenization(self, text: str):
        pos = 0
        out = []
        while pos < len(text):
            length, name = self.next_token(text, pos)
            if length <= 0:
                return None
            out.append((name, text[pos : pos + length]))
            pos += length
        return out


def sample_prefixes(
    grammar: Grammar,
    count: int,
    max_len: int = 48,
    seed: int = 0,
    dfas: TerminalDfaSet | None = None,
) -> list[str]:
    """Seeded prefixes of greedy-lexable sentences, cut at random chars.

    Each candidate sentence is realized terminal by terminal (with random
    ignored padding when the grammar has an ignore set) and kept only when
    longest-match lexing recovers exactly the intended token sequence, so
    every emitted prefix is valid for both the oracle and the engine.
    """
    rng = random.Random(seed)
    if dfas is None:
        dfas = TerminalDfaSet.compile(
            [(t.name, t.pattern) for t in grammar.terminals]
        )
    checker = _MunchChecker(grammar, dfas)
    asts = {t.name: t.pattern for t in grammar.terminals}
    ignores = sorted(grammar.ignore_set)
    cg = CharLevelGrammar.from_grammar(grammar)
    base_chart = PrefixChart(cg)

    out: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(out) < count and attempts < count * 60:
        attempts += 1
        names = random_terminal_sentence(grammar, rng)
        pieces: list[tuple[str, str]] = []
        ok = True
        for name in names:
            for _ in range(8):
                text = regex_ast.sample(asts[name], rng)
                length, winner = checker.next_token(text, 0)
                if length == len(text) and winner == name:
                    break
            else:
                ok = False
                break
            if pieces and ignores and rng.random() < 0.4:
                ig = ignores[rng.randrange(len(ignores))]
                pieces.append((ig, regex_ast.sample(asts[ig], rng)))
            pieces.append((name, text))
        if not ok:
            continue
        sentence = "".join(text for _, text in pieces)
        if not sentence or len(sentence) > max_len * 4:
            continue
        recovered = checker.tokenization(sentence)
        if recovered is None or [n for n, _ in recovered] != [n for n, _ in pieces]:
            continue
        cut = rng.randint(1, min(len(sentence), max_len))
        prefix = sentence[:cut]
        if prefix in seen:
            continue
        alive, _ = base_chart.probe(prefix)
        if not alive:
            continue
        seen.add(prefix)
        out.append(prefix)
    return out
