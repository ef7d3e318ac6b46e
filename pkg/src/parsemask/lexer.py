"""Maximal-munch lexing of partial output and the remainder split.

The lexer tokenizes with longest-match-wins semantics, but because its
input is a *partial* output that the generator may extend, the tail needs
care:

* if the whole remaining suffix is still a live prefix of some terminal
  and the longest complete match does not consume it all, the suffix is
  left unlexed (it may yet grow into one longer token);
* a complete match that consumes exactly the rest of the input is emitted
  normally — the remainder mechanism covers the possibility that its type
  still changes.

``compute_remainder`` then splits the result into the lexically fixed
prefix and the remainder: the unlexed suffix when there is one, otherwise
the text of the final token (whose classification is the only one that a
future extension can change).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .automata import LexerScanner
from .errors import LexError


@dataclass(frozen=True)
class LexToken:
    text: str
    terminal: str
    start: int
    end: int
    is_ignored: bool


@dataclass(frozen=True)
class LexResult:
    tokens: tuple[LexToken, ...]  # every token, ignored ones included
    unlexed: str
    unlexed_start: int

    @property
    def visible(self) -> tuple[LexToken, ...]:
        return tuple(t for t in self.tokens if not t.is_ignored)


class RemainderCase(enum.Enum):
    COMPLETE_FINAL_TOKEN = "complete_final_token"
    UNLEXED_SUFFIX = "unlexed_suffix"


@dataclass(frozen=True)
class PartialParseResult:
    """Lexically fixed prefix plus the suffix whose type may still change."""

    fixed_tokens: tuple[LexToken, ...]
    remainder: str
    case: RemainderCase
    remainder_terminal: str | None
    all_tokens: tuple[LexToken, ...]

    @property
    def fixed_terminals(self) -> tuple[str, ...]:
        return tuple(t.terminal for t in self.fixed_tokens)


def lex(scanner: LexerScanner, ignore_set: frozenset[str], text: str) -> LexResult:
    tokens: list[LexToken] = []
    pos = 0
    n = len(text)
    while pos < n:
        end, terminal_idx, alive = scanner.scan(text, pos)
        if alive and end < n:
            # The whole suffix can still grow into a single longer token;
            # committing a shorter match now could misclassify it.
            return LexResult(tuple(tokens), text[pos:], pos)
        if end < 0:
            raise LexError(text, pos)
        name = scanner.names[terminal_idx]
        tokens.append(
            LexToken(
                text=text[pos:end],
                terminal=name,
                start=pos,
                end=end,
                is_ignored=name in ignore_set,
            )
        )
        pos = end
    return LexResult(tuple(tokens), "", n)


def compute_remainder(result: LexResult) -> PartialParseResult:
    visible = result.visible
    if result.unlexed:
        return PartialParseResult(
            fixed_tokens=visible,
            remainder=result.unlexed,
            case=RemainderCase.UNLEXED_SUFFIX,
            remainder_terminal=None,
            all_tokens=result.tokens,
        )
    if not result.tokens:
        return PartialParseResult(
            fixed_tokens=(),
            remainder="",
            case=RemainderCase.UNLEXED_SUFFIX,
            remainder_terminal=None,
            all_tokens=(),
        )
    final = result.tokens[-1]
    if final.is_ignored:
        # Trailing ignored text: every visible token stays fixed, the
        # ignored tail is the remainder so reconstruction stays exact.
        fixed = visible
    else:
        fixed = visible[:-1]
    return PartialParseResult(
        fixed_tokens=fixed,
        remainder=final.text,
        case=RemainderCase.COMPLETE_FINAL_TOKEN,
        remainder_terminal=final.terminal,
        all_tokens=result.tokens,
    )


def reconstruct(parse: PartialParseResult, original_length: int | None = None) -> str:
    """Rebuild the input from tokens + remainder (test helper invariant)."""
    pieces = [t.text for t in parse.all_tokens]
    if parse.case is RemainderCase.COMPLETE_FINAL_TOKEN:
        return "".join(pieces)  # remainder is the final token's text
    return "".join(pieces) + parse.remainder
