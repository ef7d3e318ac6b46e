"""EBNF grammar front end.

Parses a Lark-flavored dialect into a plain-BNF :class:`Grammar`:

* ``rule_name: body`` and ``TERMINAL: body`` definitions; lowercase
  identifiers are rules, uppercase are terminals,
* alternation ``|`` (a ``|`` may start a continuation line), postfix
  ``? * + ~n ~n..m``, groups ``( )``, optionals ``[ ]``,
* ``"literal"`` (with ``"..."i`` for case-insensitive), ``/regex/flags``,
  and ``"a".."z"`` ranges,
* terminal definitions may reference other terminals; references are
  inlined into one regex,
* ``%ignore TERMINAL`` and ``%declare``; ``->`` aliases and the ``? !``
  rule modifiers and rule priorities are parsed and discarded because they
  only shape parse trees, while terminal priorities affect lexing and are
  kept.

Inline literals in rule bodies synthesize anonymous terminals that outrank
named terminals on lexer ties.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from . import regex_ast
from .errors import GrammarSyntaxError, GrammarValidationError, RegexSyntaxError
from .regex_ast import Alt, CharClass, Concat, RegexNode, Repeat

ANON_PRIORITY = 1  # anonymous literals beat named terminals on ties

_PUNCT_NAMES = {
    "(": "LPAR",
    ")": "RPAR",
    "[": "LSQB",
    "]": "RSQB",
    "{": "LBRACE",
    "}": "RBRACE",
    ",": "COMMA",
    ":": "COLON",
    ";": "SEMICOLON",
    "+": "PLUS",
    "-": "MINUS",
    "*": "STAR",
    "/": "SLASH",
    "=": "EQUAL",
    ".": "DOT",
    "<": "LESSTHAN",
    ">": "MORETHAN",
    "!": "BANG",
    "?": "QMARK",
    "%": "PERCENT",
    "^": "CIRCUMFLEX",
    "&": "AMPERSAND",
    "|": "VBAR",
    "~": "TILDE",
    "@": "AT",
    "#": "HASH",
    "$": "DOLLAR",
    "_": "UNDERSCORE",
    '"': "DBLQUOTE",
    "'": "QUOTE",
    "`": "BACKQUOTE",
    "\\": "BACKSLASH",
}


@dataclass(frozen=True)
class Span:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class TerminalDef:
    name: str
    pattern: RegexNode | None  # None only for %declare'd externals
    source: str
    priority: int = 0
    is_ignore: bool = False
    anonymous: bool = False
    span: Span | None = None


@dataclass(frozen=True)
class Production:
    lhs: str
    rhs: tuple[str, ...]
    span: Span | None = None


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    span: Span | None = None

    def __str__(self) -> str:
        at = f" at {self.span}" if self.span else ""
        return f"{self.severity}[{self.code}]{at}: {self.message}"


@dataclass(frozen=True)
class GrammarDiagnostics:
    errors: tuple[Diagnostic, ...]
    warnings: tuple[Diagnostic, ...]

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class Grammar:
    """Desugared CFG: plain-BNF productions over declared terminals."""

    terminals: tuple[TerminalDef, ...]
    rules: tuple[Production, ...]
    start: str
    ignore_set: frozenset[str]
    n_synthesized: int = 0
    dropped_terminals: tuple[str, ...] = ()

    def terminal(self, name: str) -> TerminalDef:
        for t in self.terminals:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def terminal_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terminals)

    @property
    def nonterminals(self) -> frozenset[str]:
        return frozenset(p.lhs for p in self.rules)

    def productions_of(self, lhs: str) -> list[Production]:
        return [p for p in self.rules if p.lhs == lhs]

    def canonical_bytes(self) -> bytes:
        parts = [f"start={self.start}"]
        for t in self.terminals:
            parts.append(
                f"T {t.name} p={t.priority} ig={int(t.is_ignore)} {t.pattern!r}"
            )
        for p in self.rules:
            parts.append(f"R {p.lhs} -> {' '.join(p.rhs)}")
        return "\n".join(parts).encode("utf-8")

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()


@dataclass(frozen=True)
class DesugarStats:
    n_rules: int
    n_terminals: int
    n_ignored: int
    n_anonymous: int
    n_synthesized_nonterminals: int

    @property
    def n_visible_terminals(self) -> int:
        return self.n_terminals - self.n_ignored


def desugar_stats(grammar: Grammar) -> DesugarStats:
    return DesugarStats(
        n_rules=len(grammar.rules),
        n_terminals=len(grammar.terminals),
        n_ignored=len(grammar.ignore_set),
        n_anonymous=sum(1 for t in grammar.terminals if t.anonymous),
        n_synthesized_nonterminals=grammar.n_synthesized,
    )


# --------------------------------------------------------------------------
# Meta-lexer for the grammar language itself


@dataclass(frozen=True)
class _Tok:
    kind: str
    value: str
    line: int
    col: int

    @property
    def span(self) -> Span:
        return Span(self.line, self.col)


def _meta_lex(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    line = 1
    col = 1
    n = len(text)

    def emit(kind: str, value: str, ln: int, cl: int) -> None:
        toks.append(_Tok(kind, value, ln, cl))

    while i < n:
        ch = text[i]
        ln, cl = line, col
        if ch == "\n":
            emit("NL", "\n", ln, cl)
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
                col += 1
            continue
        if ch == '"' or ch == "'":
            quote = ch
            j = i + 1
            buf = []
            while j < n:
                c = text[j]
                if c == "\\":
                    if j + 1 >= n:
                        raise GrammarSyntaxError("unterminated string", ln, cl)
                    esc = text[j + 1]
                    buf.append(
                        {"n": "\n", "t": "\t", "r": "\r", "f": "\f", "0": "\0"}.get(
                            esc, esc
                        )
                    )
                    j += 2
                elif c == quote:
                    break
                elif c == "\n":
                    raise GrammarSyntaxError("unterminated string", ln, cl)
                else:
                    buf.append(c)
                    j += 1
            if j >= n:
                raise GrammarSyntaxError("unterminated string", ln, cl)
            j += 1
            flags = ""
            if j < n and text[j] == "i":
                flags = "i"
                j += 1
            emit("STRING", flags + "\0" + "".join(buf), ln, cl)
            col += j - i
            i = j
            continue
        if ch == "/":
            j = i + 1
            depth = 0
            buf = []
            while j < n:
                c = text[j]
                if c == "\\":
                    if j + 1 >= n:
                        raise GrammarSyntaxError("unterminated regex", ln, cl)
                    buf.append(c)
                    buf.append(text[j + 1])
                    j += 2
                    continue
                if c == "[":
                    depth += 1
                elif c == "]":
                    depth = max(0, depth - 1)
                elif c == "/" and depth == 0:
                    break
                elif c == "\n":
                    raise GrammarSyntaxError("unterminated regex", ln, cl)
                buf.append(c)
                j += 1
            if j >= n:
                raise GrammarSyntaxError("unterminated regex", ln, cl)
            j += 1
            flags = ""
            while j < n and text[j] in "imslux":
                flags += text[j]
                j += 1
            emit("REGEX", flags + "\0" + "".join(buf), ln, cl)
            col += j - i
            i = j
            continue
        if ch == "%":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            emit("DIRECTIVE", text[i + 1 : j], ln, cl)
            col += j - i
            i = j
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            emit("NUMBER", text[i:j], ln, cl)
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            core = word.lstrip("_")
            kind = "TOKEN" if core and core[0].isupper() else "RULE"
            emit(kind, word, ln, cl)
            col += j - i
            i = j
            continue
        if text.startswith("..", i):
            emit("RANGEOP", "..", ln, cl)
            i += 2
            col += 2
            continue
        if text.startswith("->", i):
            emit("ARROW", "->", ln, cl)
            i += 2
            col += 2
            continue
        if ch in ":|()[]?*+~.!-":
            emit("OP", ch, ln, cl)
            i += 1
            col += 1
            continue
        raise GrammarSyntaxError(f"unexpected character {ch!r}", ln, cl)
    emit("NL", "\n", line, col)
    return toks


# --------------------------------------------------------------------------
# Expression tree produced by the meta-parser (pre-desugar form)


@dataclass(frozen=True)
class _Lit:
    text: str
    ci: bool


@dataclass(frozen=True)
class _Rx:
    pattern: str
    flags: str
    span: Span


@dataclass(frozen=True)
class _Rng:
    lo: str
    hi: str


@dataclass(frozen=True)
class _Ref:
    name: str
    is_terminal: bool
    span: Span


@dataclass(frozen=True)
class _Seq:
    items: tuple


@dataclass(frozen=True)
class _Alts:
    options: tuple


@dataclass(frozen=True)
class _Rep:
    item: object
    min: int
    max: int | None


@dataclass(frozen=True)
class _Def:
    name: str
    is_terminal: bool
    priority: int
    body: _Alts
    span: Span


class _MetaParser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self, offset: int = 0) -> _Tok | None:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Tok | None = None) -> GrammarSyntaxError:
        tok = tok or self.peek() or self.toks[-1]
        return GrammarSyntaxError(message, tok.line, tok.col)

    def skip_nl(self) -> None:
        while (t := self.peek()) is not None and t.kind == "NL":
            self.take()

    def parse(self) -> tuple[list[_Def], list[tuple[str, object, Span]]]:
        defs: list[_Def] = []
        directives: list[tuple[str, object, Span]] = []
        while True:
            self.skip_nl()
            t = self.peek()
            if t is None:
                break
            if t.kind == "DIRECTIVE":
                directives.append(self._directive())
                continue
            defs.append(self._definition())
        return defs, directives

    def _directive(self) -> tuple[str, object, Span]:
        t = self.take()
        if t.value == "ignore":
            arg = self.peek()
            if arg is None or arg.kind not in ("TOKEN", "STRING", "REGEX"):
                raise self.error("%ignore expects a terminal, string, or regex")
            self.take()
            return ("ignore", arg, t.span)
        if t.value == "declare":
            names = []
            while (nxt := self.peek()) is not None and nxt.kind == "TOKEN":
                names.append(self.take().value)
            if not names:
                raise self.error("%declare expects terminal names")
            return ("declare", names, t.span)
        raise self.error(f"unsupported directive %{t.value}", t)

    def _definition(self) -> _Def:
        t = self.take()
        # ? and ! rule modifiers only shape parse trees; drop them.
        if t.kind == "OP" and t.value in "?!":
            nxt = self.peek()
            if nxt is None or nxt.kind != "RULE":
                raise self.error("modifier must be followed by a rule name", t)
            t = self.take()
        if t.kind not in ("RULE", "TOKEN"):
            raise self.error(f"expected a definition, found {t.value!r}", t)
        name = t.value
        is_terminal = t.kind == "TOKEN"
        priority = 0
        nxt = self.peek()
        if nxt is not None and nxt.kind == "OP" and nxt.value == ".":
            self.take()
            neg = False
            if (p := self.peek()) is not None and p.kind == "OP" and p.value == "-":
                self.take()
                neg = True
            num = self.peek()
            if num is None or num.kind != "NUMBER":
                raise self.error("expected a priority number after '.'")
            self.take()
            priority = -int(num.value) if neg else int(num.value)
        colon = self.peek()
        if colon is None or colon.kind != "OP" or colon.value != ":":
            raise self.error(f"expected ':' in definition of {name!r}")
        self.take()
        body = self._expansions(inside_group=False)
        return _Def(name, is_terminal, priority, body, t.span)

    def _at_vbar(self) -> bool:
        # A '|' may be preceded by newlines (continuation lines).
        j = self.i
        while j < len(self.toks) and self.toks[j].kind == "NL":
            j += 1
        t = self.toks[j] if j < len(self.toks) else None
        if t is not None and t.kind == "OP" and t.value == "|":
            self.i = j
            return True
        return False

    def _expansions(self, inside_group: bool) -> _Alts:
        options = [self._alternative(inside_group)]
        while True:
            if inside_group:
                self.skip_nl()
            t = self.peek()
            if t is not None and t.kind == "OP" and t.value == "|":
                self.take()
                options.append(self._alternative(inside_group))
                continue
            if not inside_group and self._at_vbar():
                self.take()
                options.append(self._alternative(inside_group))
                continue
            break
        return _Alts(tuple(options))

    _ATOM_STARTS = ("STRING", "REGEX", "RULE", "TOKEN")

    def _alternative(self, inside_group: bool):
        items: list = []
        while True:
            if inside_group:
                self.skip_nl()
            t = self.peek()
            if t is None:
                break
            if t.kind == "ARROW":
                self.take()
                alias = self.peek()
                if alias is None or alias.kind not in ("RULE", "TOKEN"):
                    raise self.error("expected a name after '->'")
                self.take()  # aliases only rename tree nodes; discard
                break
            if t.kind in self._ATOM_STARTS or (
                t.kind == "OP" and t.value in "(["
            ):
                items.append(self._expr())
                continue
            break
        return _Seq(tuple(items))

    def _expr(self):
        node = self._atom()
        while True:
            t = self.peek()
            if t is None or t.kind != "OP":
                break
            if t.value in "?*+":
                self.take()
                node = {
                    "?": _Rep(node, 0, 1),
                    "*": _Rep(node, 0, None),
                    "+": _Rep(node, 1, None),
                }[t.value]
                continue
            if t.value == "~":
                self.take()
                lo_tok = self.peek()
                if lo_tok is None or lo_tok.kind != "NUMBER":
                    raise self.error("expected a count after '~'")
                self.take()
                lo = int(lo_tok.value)
                hi = lo
                if (r := self.peek()) is not None and r.kind == "RANGEOP":
                    self.take()
                    hi_tok = self.peek()
                    if hi_tok is None or hi_tok.kind != "NUMBER":
                        raise self.error("expected a count after '..'")
                    self.take()
                    hi = int(hi_tok.value)
                node = _Rep(node, lo, hi)
                continue
            break
        return node

    def _atom(self):
        t = self.take()
        if t.kind == "STRING":
            flags, _, body = t.value.partition("\0")
            nxt = self.peek()
            if nxt is not None and nxt.kind == "RANGEOP":
                self.take()
                hi = self.peek()
                if hi is None or hi.kind != "STRING":
                    raise self.error("expected a string after '..'")
                self.take()
                _, _, hi_body = hi.value.partition("\0")
                if len(body) != 1 or len(hi_body) != 1:
                    raise self.error("range endpoints must be single characters", t)
                return _Rng(body, hi_body)
            return _Lit(body, ci="i" in flags)
        if t.kind == "REGEX":
            flags, _, body = t.value.partition("\0")
            return _Rx(body, flags, t.span)
        if t.kind in ("RULE", "TOKEN"):
            return _Ref(t.value, t.kind == "TOKEN", t.span)
        if t.kind == "OP" and t.value == "(":
            inner = self._expansions(inside_group=True)
            self.skip_nl()
            close = self.peek()
            if close is None or close.kind != "OP" or close.value != ")":
                raise self.error("expected ')'", t)
            self.take()
            return inner
        if t.kind == "OP" and t.value == "[":
            inner = self._expansions(inside_group=True)
            self.skip_nl()
            close = self.peek()
            if close is None or close.kind != "OP" or close.value != "]":
                raise self.error("expected ']'", t)
            self.take()
            return _Rep(inner, 0, 1)
        raise self.error(f"unexpected {t.value!r}", t)


# --------------------------------------------------------------------------
# Desugaring


class _Desugarer:
    def __init__(self, defs: list[_Def], directives):
        self.defs = defs
        self.directives = directives
        self.terminal_defs: dict[str, _Def] = {}
        self.rule_defs: dict[str, _Def] = {}
        self.declared_external: set[str] = set()
        self.anon: dict[tuple, str] = {}
        self.anon_order: list[TerminalDef] = []
        self.named_terminals: dict[str, TerminalDef] = {}
        self.productions: list[Production] = []
        self.synth_counter = 0
        self.anon_counter = 0
        self.ignore_names: list[str] = []
        self._inlining: list[str] = []
        self.referenced: set[str] = set()

    def run(self) -> Grammar:
        for d in self.defs:
            table = self.terminal_defs if d.is_terminal else self.rule_defs
            if d.name in table:
                kind = "terminal" if d.is_terminal else "rule"
                raise GrammarSyntaxError(
                    f"duplicate {kind} {d.name!r}", d.span.line, d.span.column
                )
            table[d.name] = d
        for kind, arg, span in self.directives:
            if kind == "declare":
                for name in arg:
                    self.declared_external.add(name)
            elif kind == "ignore":
                tok = arg
                if tok.kind == "TOKEN":
                    self.ignore_names.append(tok.value)
                elif tok.kind == "STRING":
                    flags, _, body = tok.value.partition("\0")
                    self.ignore_names.append(
                        self._anon_terminal(_Lit(body, "i" in flags), tok.span)
                    )
                else:
                    flags, _, body = tok.value.partition("\0")
                    self.ignore_names.append(
                        self._anon_terminal(_Rx(body, flags, tok.span), tok.span)
                    )

        for name, d in self.rule_defs.items():
            for option in d.body.options:
                rhs = self._sequence(option, d.span)
                self.productions.append(Production(name, tuple(rhs), d.span))

        # Terminal set: named terminals used in rules or ignored, in source
        # order, then anonymous literals in encounter order. Terminals only
        # referenced by other terminals are inlined; the rest are dropped.
        used = {s for p in self.productions for s in p.rhs}
        used.update(self.ignore_names)
        ignored = set(self.ignore_names)
        terminals: list[TerminalDef] = []
        for d in self.defs:
            if not d.is_terminal or d.name not in used:
                continue
            terminals.append(self._compile_terminal(d, is_ignore=d.name in ignored))
        for name in self.declared_external:
            if name in used and name not in self.terminal_defs:
                terminals.append(
                    TerminalDef(name, None, f"%declare {name}", 0, name in ignored, False, None)
                )
        for t in self.anon_order:
            if t.name in used:
                if t.name in ignored and not t.is_ignore:
                    t = TerminalDef(
                        t.name, t.pattern, t.source, t.priority, True, t.anonymous, t.span
                    )
                terminals.append(t)

        dropped = tuple(
            name
            for name in self.terminal_defs
            if name not in used and name not in self.referenced
        )
        if "start" not in self.rule_defs:
            raise GrammarSyntaxError("grammar has no 'start' rule", 1, 1)
        return Grammar(
            terminals=tuple(terminals),
            rules=tuple(self.productions),
            start="start",
            ignore_set=frozenset(self.ignore_names),
            n_synthesized=self.synth_counter,
            dropped_terminals=dropped,
        )

    # -- rule side ---------------------------------------------------------

    def _sequence(self, seq: _Seq, span: Span) -> list[str]:
        out: list[str] = []
        for item in seq.items:
            out.extend(self._symbol(item, span))
        return out

    def _symbol(self, item, span: Span) -> list[str]:
        if isinstance(item, _Lit):
            return [self._anon_terminal(item, span)]
        if isinstance(item, _Rx):
            return [self._anon_terminal(item, item.span)]
        if isinstance(item, _Rng):
            return [self._anon_terminal(item, span)]
        if isinstance(item, _Ref):
            if item.is_terminal and item.name not in self.terminal_defs and (
                item.name not in self.declared_external
            ):
                raise GrammarSyntaxError(
                    f"reference to undeclared terminal {item.name!r}",
                    item.span.line,
                    item.span.column,
                )
            # Undefined rule references survive into validate().
            return [item.name]
        if isinstance(item, _Seq):
            return self._sequence(item, span)
        if isinstance(item, _Alts):
            if len(item.options) == 1:
                return self._sequence(item.options[0], span)
            name = self._synth("grp")
            for option in item.options:
                self.productions.append(
                    Production(name, tuple(self._sequence(option, span)), span)
                )
            return [name]
        if isinstance(item, _Rep):
            return self._repeat(item, span)
        raise TypeError(item)

    def _repeat(self, rep: _Rep, span: Span) -> list[str]:
        inner = self._symbol(rep.item, span)
        if rep.min == 0 and rep.max == 1:
            name = self._synth("opt")
            self.productions.append(Production(name, (), span))
            self.productions.append(Production(name, tuple(inner), span))
            return [name]
        if rep.min == 0 and rep.max is None:
            name = self._synth("star")
            self.productions.append(Production(name, (), span))
            self.productions.append(Production(name, (name, *inner), span))
            return [name]
        if rep.min == 1 and rep.max is None:
            name = self._synth("plus")
            self.productions.append(Production(name, tuple(inner), span))
            self.productions.append(Production(name, (name, *inner), span))
            return [name]
        if rep.max is None:  # n or more
            out = list(inner) * rep.min
            star = self._repeat(_Rep(rep.item, 0, None), span)
            return out + star
        if rep.max > 64:
            raise GrammarSyntaxError(
                f"repeat bound {rep.max} too large to expand", span.line, span.column
            )
        out = list(inner) * rep.min
        for _ in range(rep.max - rep.min):
            out.extend(self._repeat(_Rep(rep.item, 0, 1), span))
        return out

    def _synth(self, kind: str) -> str:
        self.synth_counter += 1
        return f"__{kind}{self.synth_counter}"

    # -- terminal side -----------------------------------------------------

    def _anon_name(self, item) -> str:
        if isinstance(item, _Lit):
            text = item.text
            if text.isidentifier() and text.upper() not in self.terminal_defs:
                candidate = text.upper()
            elif len(text) == 1 and text in _PUNCT_NAMES:
                candidate = _PUNCT_NAMES[text]
            elif all(c in _PUNCT_NAMES for c in text) and len(text) <= 3:
                candidate = "_".join(_PUNCT_NAMES[c] for c in text)
            else:
                self.anon_counter += 1
                return f"__ANON_{self.anon_counter}"
            taken = set(self.terminal_defs) | {t.name for t in self.anon_order}
            while candidate in taken:
                candidate += "_"
            return candidate
        self.anon_counter += 1
        return f"__ANON_{self.anon_counter}"

    def _anon_terminal(self, item, span: Span) -> str:
        if isinstance(item, _Lit):
            key = ("lit", item.text, item.ci)
            ast = regex_ast.literal(item.text, item.ci)
            source = f'"{item.text}"' + ("i" if item.ci else "")
        elif isinstance(item, _Rx):
            key = ("rx", item.pattern, item.flags)
            ast = self._parse_rx(item)
            source = f"/{item.pattern}/{item.flags}"
        elif isinstance(item, _Rng):
            key = ("rng", item.lo, item.hi)
            ast = CharClass(((ord(item.lo), ord(item.hi)),))
            source = f'"{item.lo}".."{item.hi}"'
        else:
            raise TypeError(item)
        if key in self.anon:
            return self.anon[key]
        name = self._anon_name(item)
        self.anon[key] = name
        self.anon_order.append(
            TerminalDef(name, ast, source, ANON_PRIORITY, False, True, span)
        )
        return name

    def _parse_rx(self, rx: _Rx) -> RegexNode:
        flags = "".join(f for f in rx.flags if f in "is")
        try:
            return regex_ast.parse_regex(rx.pattern, flags)
        except RegexSyntaxError as e:
            raise GrammarSyntaxError(str(e), rx.span.line, rx.span.column) from e

    def _compile_terminal(self, d: _Def, is_ignore: bool) -> TerminalDef:
        ast = self._terminal_expr(d.body, d.name)
        named = TerminalDef(
            name=d.name,
            pattern=ast,
            source=d.name,
            priority=d.priority,
            is_ignore=is_ignore,
            anonymous=False,
            span=d.span,
        )
        self.named_terminals[d.name] = named
        return named

    def _terminal_expr(self, item, owner: str) -> RegexNode:
        if isinstance(item, _Alts):
            opts = tuple(self._terminal_expr(o, owner) for o in item.options)
            return opts[0] if len(opts) == 1 else Alt(opts)
        if isinstance(item, _Seq):
            parts = tuple(self._terminal_expr(x, owner) for x in item.items)
            return parts[0] if len(parts) == 1 else Concat(parts)
        if isinstance(item, _Rep):
            return Repeat(self._terminal_expr(item.item, owner), item.min, item.max)
        if isinstance(item, _Lit):
            return regex_ast.literal(item.text, item.ci)
        if isinstance(item, _Rx):
            return self._parse_rx(item)
        if isinstance(item, _Rng):
            return CharClass(((ord(item.lo), ord(item.hi)),))
        if isinstance(item, _Ref):
            if not item.is_terminal:
                raise GrammarSyntaxError(
                    f"terminal {owner!r} references rule {item.name!r}; terminals "
                    "may only reference terminals",
                    item.span.line,
                    item.span.column,
                )
            ref = self.terminal_defs.get(item.name)
            if ref is None:
                raise GrammarSyntaxError(
                    f"reference to undeclared terminal {item.name!r}",
                    item.span.line,
                    item.span.column,
                )
            if item.name in self._inlining:
                raise GrammarSyntaxError(
                    f"terminal reference cycle through {item.name!r}",
                    item.span.line,
                    item.span.column,
                )
            self.referenced.add(item.name)
            self._inlining.append(item.name)
            try:
                return self._terminal_expr(ref.body, item.name)
            finally:
                self._inlining.pop()
        raise TypeError(item)


def parse_grammar(text: str) -> Grammar:
    """Parse and desugar EBNF source into a plain-BNF Grammar."""
    toks = _meta_lex(text)
    defs, directives = _MetaParser(toks).parse()
    return _Desugarer(defs, directives).run()


def load_grammar(path: str) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


WITNESS_LENGTH_BOUND = 16  # every terminal must accept a string this short


def validate(grammar: Grammar) -> GrammarDiagnostics:
    """Check the invariants downstream compilation relies on."""
    errors: list[Diagnostic] = []
    warnings: list[Diagnostic] = []

    seen: set[str] = set()
    for t in grammar.terminals:
        if t.name in seen:
            errors.append(
                Diagnostic("error", "duplicate-terminal", f"duplicate terminal {t.name!r}", t.span)
            )
        seen.add(t.name)
        if t.pattern is None:
            errors.append(
                Diagnostic(
                    "error",
                    "external-terminal",
                    f"terminal {t.name!r} is %declare'd but never defined",
                    t.span,
                )
            )
            continue
        witness = regex_ast.shortest_witness(t.pattern)
        if witness is None:
            errors.append(
                Diagnostic(
                    "error",
                    "empty-language-terminal",
                    f"terminal {t.name!r} matches no string",
                    t.span,
                )
            )
        elif len(witness) > WITNESS_LENGTH_BOUND:
            warnings.append(
                Diagnostic(
                    "warning",
                    "long-shortest-match",
                    f"terminal {t.name!r} has no match shorter than {len(witness)}",
                    t.span,
                )
            )
        if regex_ast.nullable(t.pattern):
            errors.append(
                Diagnostic(
                    "error",
                    "empty-string-terminal",
                    f"terminal {t.name!r} matches the empty string",
                    t.span,
                )
            )

    terminal_names = set(seen)
    nonterminals = grammar.nonterminals
    for p in grammar.rules:
        for sym in p.rhs:
            if sym not in terminal_names and sym not in nonterminals:
                errors.append(
                    Diagnostic(
                        "error",
                        "undefined-symbol",
                        f"rule {p.lhs!r} references undefined symbol {sym!r}",
                        p.span,
                    )
                )
    if grammar.start not in nonterminals:
        errors.append(
            Diagnostic("error", "no-start", f"start symbol {grammar.start!r} has no rule", None)
        )

    # Productivity: the start symbol must derive at least one terminal string.
    productive: set[str] = set(terminal_names)
    changed = True
    while changed:
        changed = False
        for p in grammar.rules:
            if p.lhs not in productive and all(s in productive for s in p.rhs):
                productive.add(p.lhs)
                changed = True
    if grammar.start in nonterminals and grammar.start not in productive:
        errors.append(
            Diagnostic(
                "error",
                "unproductive-start",
                f"start symbol {grammar.start!r} derives no terminal string",
                None,
            )
        )
    for nt in sorted(nonterminals - productive):
        if nt != grammar.start:
            warnings.append(
                Diagnostic("warning", "unproductive", f"symbol {nt!r} derives no terminal string", None)
            )

    # Reachability from start (ignore terminals are implicitly reachable).
    reachable = {grammar.start}
    frontier = [grammar.start]
    while frontier:
        sym = frontier.pop()
        for p in grammar.rules:
            if p.lhs == sym:
                for s in p.rhs:
                    if s not in reachable:
                        reachable.add(s)
                        if s in nonterminals:
                            frontier.append(s)
    reachable.update(grammar.ignore_set)
    for nt in sorted(nonterminals - reachable):
        warnings.append(
            Diagnostic("warning", "unreachable", f"rule {nt!r} is unreachable from start", None)
        )
    for t in grammar.terminals:
        if t.name not in reachable and not any(t.name in p.rhs for p in grammar.rules):
            warnings.append(
                Diagnostic("warning", "unused-terminal", f"terminal {t.name!r} is never used", t.span)
            )
    for name in grammar.dropped_terminals:
        warnings.append(
            Diagnostic("warning", "unused-terminal", f"terminal {name!r} is never used", None)
        )

    for ig in sorted(grammar.ignore_set):
        if ig not in terminal_names:
            errors.append(
                Diagnostic("error", "undefined-symbol", f"%ignore references unknown terminal {ig!r}", None)
            )

    return GrammarDiagnostics(tuple(errors), tuple(warnings))


def require_valid(grammar: Grammar) -> Grammar:
    diagnostics = validate(grammar)
    if not diagnostics.ok:
        raise GrammarValidationError(diagnostics)
    return grammar
