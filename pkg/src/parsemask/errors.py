"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ParsemaskError(Exception):
    """Base class for all errors raised by this package."""


class RegexSyntaxError(ParsemaskError):
    """Pattern uses a construct outside the supported regex subset."""

    def __init__(self, message: str, pattern: str, pos: int):
        super().__init__(f"{message} at position {pos} in /{pattern}/")
        self.pattern = pattern
        self.pos = pos


class GrammarSyntaxError(ParsemaskError):
    """Grammar source text could not be parsed."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class GrammarValidationError(ParsemaskError):
    """Grammar has validation errors that block compilation."""

    def __init__(self, diagnostics):
        lines = "; ".join(d.message for d in diagnostics.errors)
        super().__init__(f"grammar is invalid: {lines}")
        self.diagnostics = diagnostics


class DfaLimitError(ParsemaskError):
    """A terminal's DFA exceeded the configured state budget."""


class LexError(ParsemaskError):
    """A character begins no terminal of the grammar."""

    def __init__(self, text: str, pos: int):
        snippet = text[pos : pos + 12]
        super().__init__(f"no terminal matches at offset {pos}: {snippet!r}")
        self.pos = pos


class LrConflictError(ParsemaskError):
    """Grammar is not LR(1)/LALR(1); the table has action conflicts."""

    def __init__(self, conflicts):
        self.conflicts = conflicts
        first = conflicts[0]
        super().__init__(
            f"{len(conflicts)} action conflict(s); first on {first.terminal!r}: "
            f"{first.describe()}"
        )


class ParseError(ParsemaskError):
    """A lexically fixed token hit an error action during parsing."""

    def __init__(self, terminal: str, index: int, expected):
        super().__init__(
            f"token #{index} of terminal {terminal!r} is not acceptable here; "
            f"expected one of {sorted(expected)}"
        )
        self.terminal = terminal
        self.index = index
        self.expected = frozenset(expected)


class VocabularyFormatError(ParsemaskError):
    """Vocabulary file is malformed or missing required fields."""


class MaskWidthError(ParsemaskError):
    """Two masks (or a mask and a score vector) have different widths."""


class StoreFormatError(ParsemaskError):
    """Mask-store file is truncated, corrupt, or has the wrong version."""


class StoreHashMismatchError(StoreFormatError):
    """Store was built from a different grammar or vocabulary."""

    def __init__(self, which: str):
        super().__init__(f"{which} hash does not match the loaded artifacts")
        self.which = which


class ResourceLimitError(ParsemaskError):
    """A configured state x vocabulary budget was exceeded."""


class OracleBoundError(ParsemaskError):
    """Oracle input exceeds the configured length bound."""


class PromptNotInLanguageError(ParsemaskError):
    """Generation prompt is not a valid partial output for the grammar."""


class StuckStateError(ParsemaskError):
    """Mask is empty and EOS is not permitted; generation cannot proceed."""


class ScorerProtocolError(ParsemaskError):
    """External scorer peer violated the line protocol."""
