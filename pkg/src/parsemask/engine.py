"""Compiled grammar engine: lexer + parser + DFAs behind one object.

A :class:`GrammarEngine` is immutable after construction and safe to share
across concurrent generation sessions; per-session mutable state lives in
the parser :class:`~parsemask.lr.StateCache` owned by each session.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import lexer as lexmod
from .automata import LexerScanner, TerminalDfaSet
from .errors import LexError, ParseError
from .grammar import Grammar, parse_grammar, require_valid
from .lexer import LexResult, PartialParseResult, RemainderCase
from .lr import (
    END,
    IncrementalParse,
    LrTable,
    StateCache,
    build_accept_sequences,
    build_tables,
    parse_incremental,
)


@dataclass(frozen=True)
class ParsedPrefix:
    """Everything the masking step needs to know about a partial output."""

    partial: PartialParseResult
    accept_sequences: frozenset[tuple[str, ...]]
    a0: frozenset[str]
    a1: frozenset[str]
    stack_states: tuple[int, ...]
    final_shift_failed: bool
    tokens_parsed: int

    @property
    def remainder(self) -> str:
        return self.partial.remainder


class GrammarEngine:
    def __init__(
        self,
        grammar: Grammar,
        flavor: str = "lr1",
        minimize_dfas: bool = True,
    ):
        require_valid(grammar)
        self.grammar = grammar
        self.flavor = flavor
        self.dfas = TerminalDfaSet.compile(
            [(t.name, t.pattern) for t in grammar.terminals],
        )
        self.scanner = LexerScanner.compile(
            [
                (t.name, t.pattern, t.priority, t.name in grammar.ignore_set)
                for t in grammar.terminals
            ],
            minimize=minimize_dfas,
        )
        self.table: LrTable = build_tables(grammar, flavor)
        self.ignore_set = frozenset(grammar.ignore_set)

    @classmethod
    def from_text(cls, text: str, **kwargs) -> "GrammarEngine":
        return cls(parse_grammar(text), **kwargs)

    @classmethod
    def from_file(cls, path: str, **kwargs) -> "GrammarEngine":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), **kwargs)

    # -- lexing ------------------------------------------------------------

    def lex(self, text: str) -> LexResult:
        return lexmod.lex(self.scanner, self.ignore_set, text)

    def partial_lex(self, text: str) -> PartialParseResult:
        return lexmod.compute_remainder(self.lex(text))

    # -- parsing -----------------------------------------------------------

    def parse_prefix(self, text: str, cache: StateCache | None = None) -> ParsedPrefix:
        """Lex, split off the remainder, parse the fixed tokens, and build
        the accept sequences for the masking step."""
        partial = self.partial_lex(text)
        tokens = self._parser_tokens(partial)
        inc = parse_incremental(self.table, cache, tokens)
        seqs = build_accept_sequences(partial, inc.a0, inc.a1, self.ignore_set)
        return ParsedPrefix(
            partial=partial,
            accept_sequences=seqs,
            a0=inc.a0,
            a1=inc.a1,
            stack_states=inc.stack.snapshot(),
            final_shift_failed=inc.final_shift_failed,
            tokens_parsed=inc.tokens_parsed,
        )

    def _parser_tokens(self, partial: PartialParseResult):
        """Tokens the parser consumes: the fixed prefix plus, in the
        complete-final-token case, the final token itself (its acceptance
        yields A1; its failure only empties A1)."""
        if (
            partial.case is RemainderCase.COMPLETE_FINAL_TOKEN
            and partial.remainder_terminal not in self.ignore_set
        ):
            final = partial.all_tokens[-1]
            return (*partial.fixed_tokens, final)
        return partial.fixed_tokens

    def accept_sequences(self, text: str) -> frozenset[tuple[str, ...]]:
        return self.parse_prefix(text).accept_sequences

    def is_complete(self, text: str) -> bool:
        """Whole-sentence membership; never raises."""
        try:
            result = self.lex(text)
        except LexError:
            return False
        if result.unlexed:
            return False
        tokens = result.visible
        try:
            inc = parse_incremental(self.table, None, tokens)
        except ParseError:
            return False
        if inc.final_shift_failed:
            return False
        return END in inc.a1

    def prefix_valid(self, text: str) -> bool:
        """Partial-output membership as the engine sees it: the fixed prefix
        parses and the remainder can still start some accept sequence."""
        try:
            parsed = self.parse_prefix(text)
        except (LexError, ParseError):
            return False
        if self.is_complete(text):
            return True
        r = parsed.remainder
        for seq in parsed.accept_sequences:
            dfa = self.dfas[seq[0]]
            if dfa.walk(dfa.start, r) in dfa.live:
                return True
        return False

    def new_cache(self) -> StateCache:
        return StateCache()
