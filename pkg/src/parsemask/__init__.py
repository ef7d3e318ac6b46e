"""Grammar-constrained token decoding.

Compile an EBNF grammar once, precompute a DFA mask store against a token
vocabulary, and per generation step mask any scorer's distribution down to
tokens that keep the output a syntactically valid partial sentence.
"""

from .automata import Dfa, LexerScanner, TerminalDfaSet, dmatch, regex_to_dfa, walk
from .decoder import (
    GenerationConfig,
    GenerationSession,
    Greedy,
    ScriptScorer,
    SeededScorer,
    Temperature,
    TopK,
    TopP,
    UniformScorer,
    effective_mask,
    grammar_mask,
    masked_generate,
    step,
)
from .engine import GrammarEngine
from .grammar import (
    Grammar,
    GrammarDiagnostics,
    Production,
    TerminalDef,
    desugar_stats,
    load_grammar,
    parse_grammar,
    validate,
)
from .lexer import LexToken, PartialParseResult, RemainderCase
from .lr import LrTable, StateCache, accept_terminals, build_tables, parse_incremental
from .masks import (
    MaskStore,
    VocabMask,
    Vocabulary,
    build_mask_store,
    load_store,
    load_vocabulary,
    mask_apply,
    mask_union,
    save_store,
    save_vocabulary,
)
from .oracle import PrefixChart, CharLevelGrammar, oracle_mask, prefix_accepts, sample_prefixes

__version__ = "0.1.0"
