"""Synthetic vocabularies for tests, benchmarks, and demos."""

from __future__ import annotations

import random
import string

from . import oracle
from .grammar import Grammar
from .masks import Vocabulary

EOS = "<eos>"


def grammar_alphabet(grammar: Grammar, cap: int = 512) -> list[str]:
    """Characters drawn from every terminal's ranges; huge ranges (negated
    classes) contribute their printable ASCII members only."""
    chars: set[str] = set()
    from .regex_ast import Alt, CharClass, Concat, Repeat

    def visit(node):
        if isinstance(node, CharClass):
            for lo, hi in node.ranges:
                if hi - lo > 94:
                    for c in string.printable[:-5]:
                        if lo <= ord(c) <= hi:
                            chars.add(c)
                else:
                    for cp in range(lo, hi + 1):
                        chars.add(chr(cp))
        elif isinstance(node, Concat):
            for p in node.parts:
                visit(p)
        elif isinstance(node, Alt):
            for o in node.options:
                visit(o)
        elif isinstance(node, Repeat):
            visit(node.node)

    for t in grammar.terminals:
        if t.pattern is not None:
            visit(t.pattern)
    out = sorted(chars)
    if len(out) > cap:
        raise ValueError(f"grammar alphabet has {len(out)} chars, cap is {cap}")
    return out


def single_char_vocabulary(grammar: Grammar, eos: str = EOS) -> Vocabulary:
    """EOS plus one token per grammar-alphabet character."""
    return Vocabulary((eos, *grammar_alphabet(grammar)), 0)


def random_vocabulary(
    grammar: Grammar,
    size: int,
    seed: int = 0,
    max_token_len: int = 6,
    eos: str = EOS,
) -> Vocabulary:
    """EOS + alphabet singles + random substrings of sampled sentences.

    Substrings of real sentences make completions reachable (closing
    quotes/brackets appear), which keeps random-scorer generations short.
    """
    rng = random.Random(seed)
    alphabet = grammar_alphabet(grammar)
    corpus = oracle.sample_prefixes(grammar, max(32, size // 4), max_len=96, seed=seed)
    tokens: list[str] = [eos]
    seen = {eos}
    for c in alphabet:
        if len(tokens) >= size:
            break
        if c not in seen:
            seen.add(c)
            tokens.append(c)
    attempts = 0
    while len(tokens) < size and attempts < size * 200:
        attempts += 1
        if corpus:
            src = corpus[rng.randrange(len(corpus))]
        else:
            src = "".join(rng.choice(alphabet) for _ in range(max_token_len * 2))
        if not src:
            continue
        ln = rng.randint(1, max_token_len)
        start = rng.randrange(max(1, len(src) - ln + 1))
        piece = src[start : start + ln]
        if piece and piece not in seen:
            seen.add(piece)
            tokens.append(piece)
    while len(tokens) < size:
        filler = f"<pad{len(tokens)}>"
        tokens.append(filler)
    return Vocabulary(tuple(tokens), 0)
