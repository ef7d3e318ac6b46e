"""Command-line operator surface.

Subcommands: ``compile`` (grammar report), ``build-store``, ``check``
(membership), ``mask`` (allowed tokens for a partial text), ``generate``,
and ``bench`` (incremental vs. scratch parsing, mask latency).

Configuration precedence: flags > ``--config`` file (``key=value`` lines)
> ``PMASK_*`` environment variables > defaults. Exit codes: 0 ok,
2 grammar error, 3 resource limit, 4 membership failure, 5 protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

from . import decoder, oracle
from .engine import GrammarEngine
from .errors import (
    GrammarSyntaxError,
    GrammarValidationError,
    LexError,
    LrConflictError,
    ParseError,
    ParsemaskError,
    PromptNotInLanguageError,
    ResourceLimitError,
    ScorerProtocolError,
    StoreFormatError,
    VocabularyFormatError,
)
from .grammar import desugar_stats, load_grammar, parse_grammar, validate
from .lr import build_tables
from .masks import Vocabulary, build_mask_store, load_store, load_vocabulary, save_store

EXIT_OK = 0
EXIT_GRAMMAR = 2
EXIT_RESOURCES = 3
EXIT_MEMBERSHIP = 4
EXIT_PROTOCOL = 5

ENV_PREFIX = "PMASK_"
_CONFIG_KEYS = {"grammar", "vocab", "store", "parser", "max_tokens", "seed"}


def _load_config(path: str | None) -> dict[str, str]:
    merged: dict[str, str] = {}
    for key in _CONFIG_KEYS:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            merged[key] = env
    if path:
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParsemaskError(f"{path}:{line_no}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in _CONFIG_KEYS:
                    raise ParsemaskError(f"{path}:{line_no}: unknown key {key!r}")
                merged[key] = value.strip()
    return merged


class _Out:
    def __init__(self, json_lines: bool):
        self.json_lines = json_lines

    def emit(self, record: dict, human: str) -> None:
        if self.json_lines:
            print(json.dumps(record, ensure_ascii=True))
        else:
            print(human)


def _read_text_arg(value: str) -> str:
    if value == "-":
        return sys.stdin.read()
    return value


def _load_engine(args, out: _Out) -> GrammarEngine:
    grammar = load_grammar(args.grammar)
    diagnostics = validate(grammar)
    for w in diagnostics.warnings:
        print(f"warning: {w.message}", file=sys.stderr)
    if not diagnostics.ok:
        for e in diagnostics.errors:
            print(f"error: {e.message}", file=sys.stderr)
        raise GrammarValidationError(diagnostics)
    return GrammarEngine(grammar, flavor=getattr(args, "parser", "lr1"))


def cmd_compile(args, out: _Out) -> int:
    grammar = load_grammar(args.grammar)
    diagnostics = validate(grammar)
    stats = desugar_stats(grammar)
    record = {
        "record": "compile",
        "rules": stats.n_rules,
        "terminals": stats.n_terminals,
        "ignored_terminals": stats.n_ignored,
        "anonymous_terminals": stats.n_anonymous,
        "synthesized_nonterminals": stats.n_synthesized_nonterminals,
        "errors": [str(e) for e in diagnostics.errors],
        "warnings": [str(w) for w in diagnostics.warnings],
    }
    human = (
        f"{stats.n_rules} rules, {stats.n_terminals} terminals "
        f"({stats.n_ignored} ignored, {stats.n_anonymous} anonymous), "
        f"{stats.n_synthesized_nonterminals} synthesized nonterminals"
    )
    if not diagnostics.ok:
        out.emit(record, human)
        for e in diagnostics.errors:
            print(f"error: {e.message}", file=sys.stderr)
        return EXIT_GRAMMAR
    if args.emit_table_stats:
        table = build_tables(grammar, args.parser)
        record["lr_states"] = table.n_states
        record["parser"] = table.flavor
        human += f"; {table.flavor} table: {table.n_states} states, no conflicts"
    out.emit(record, human)
    for w in diagnostics.warnings:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK


def cmd_build_store(args, out: _Out) -> int:
    engine = _load_engine(args, out)
    vocab = load_vocabulary(args.vocab)
    started = time.perf_counter()
    store = build_mask_store(engine.dfas, engine.grammar, vocab)
    elapsed = time.perf_counter() - started
    save_store(store, args.out)
    size = os.path.getsize(args.out)
    out.emit(
        {
            "record": "build-store",
            "states": store.n_states,
            "terminals": len(store.terminal_order),
            "vocab": len(vocab),
            "seconds": round(elapsed, 3),
            "bytes": size,
            "path": args.out,
        },
        f"built store: {store.n_states} states x {len(vocab)} tokens "
        f"in {elapsed:.2f}s, {size} bytes -> {args.out}",
    )
    return EXIT_OK


def cmd_check(args, out: _Out) -> int:
    engine = _load_engine(args, out)
    text = _read_text_arg(args.text)
    if args.dump_tokens:
        result = engine.lex(text)
        for tok in result.tokens:
            flag = " (ignored)" if tok.is_ignored else ""
            print(f"{tok.start}:{tok.end}\t{tok.terminal}\t{tok.text!r}{flag}")
        if result.unlexed:
            print(f"{result.unlexed_start}:-\t<unlexed>\t{result.unlexed!r}")
    if args.prefix:
        member = engine.prefix_valid(text)
        kind = "prefix"
    else:
        member = engine.is_complete(text)
        kind = "sentence"
    out.emit(
        {"record": "check", "kind": kind, "member": member, "text": text},
        f"{kind} membership: {member}",
    )
    return EXIT_OK if member else EXIT_MEMBERSHIP


def cmd_mask(args, out: _Out) -> int:
    engine = _load_engine(args, out)
    vocab = load_vocabulary(args.vocab)
    store = load_store(args.store, engine.grammar.digest(), vocab.digest())
    text = _read_text_arg(args.text)
    if not engine.prefix_valid(text):
        print("text is not a valid partial output", file=sys.stderr)
        return EXIT_MEMBERSHIP
    parsed = engine.parse_prefix(text)
    mask = decoder.effective_mask(engine, store, vocab, text, parsed)
    allowed = [vocab.tokens[i] for i in mask.indices()]
    record = {
        "record": "mask",
        "count": mask.count(),
        "allowed": allowed,
    }
    if args.explain:
        record["remainder"] = parsed.remainder
        record["case"] = parsed.partial.case.value
        record["accept_sequences"] = sorted(
            " ".join(seq) for seq in parsed.accept_sequences
        )
    if args.verify:
        expected = oracle.oracle_mask(engine.grammar, text, vocab)
        record["oracle_count"] = len(expected)
        record["oracle_subset_of_mask"] = expected <= set(mask.indices())
    out.emit(record, f"{mask.count()} allowed tokens: {allowed}")
    if args.explain and not out.json_lines:
        print(f"remainder: {parsed.remainder!r} ({parsed.partial.case.value})")
        for seq in sorted(" ".join(s) for s in parsed.accept_sequences):
            print(f"  accept: {seq}")
    if args.verify and not out.json_lines:
        print(
            f"oracle: {record['oracle_count']} tokens, "
            f"subset of mask: {record['oracle_subset_of_mask']}"
        )
    return EXIT_OK


def _make_scorer(spec: str, width: int):
    kind, _, arg = spec.partition(":")
    if kind == "uniform":
        return decoder.UniformScorer(width)
    if kind == "seeded":
        return decoder.SeededScorer(width, int(arg or 0))
    if kind == "script":
        return decoder.ScriptScorer.from_file(arg, width)
    if kind == "external":
        return decoder.ExternalScorer(arg, width)
    raise ParsemaskError(f"unknown scorer {spec!r}")


def cmd_generate(args, out: _Out) -> int:
    engine = _load_engine(args, out)
    vocab = load_vocabulary(args.vocab)
    store = load_store(args.store, engine.grammar.digest(), vocab.digest())
    prompt = _read_text_arg(args.prompt)
    scorer = _make_scorer(args.scorer, len(vocab))
    strategy = decoder.parse_strategy(args.strategy)
    config = decoder.GenerationConfig(
        max_tokens=args.max_tokens,
        stop_strings=tuple(args.stop or ()),
        opportunistic=args.opportunistic,
    )
    session = decoder.GenerationSession(engine, store, vocab, prompt, config)
    result = decoder.masked_generate(session, scorer, strategy)
    if hasattr(scorer, "close"):
        scorer.close()
    out.emit(
        {
            "record": "generate",
            "text": result.text,
            "finish_reason": result.finish_reason,
            "steps": result.steps,
            "token_ids": result.token_ids,
        },
        f"[{result.finish_reason} after {result.steps} steps]\n{result.text}",
    )
    return EXIT_OK


def cmd_bench(args, out: _Out) -> int:
    engine = _load_engine(args, out)
    vocab = load_vocabulary(args.vocab)
    store = load_store(args.store, engine.grammar.digest(), vocab.digest()) if args.store else None
    scorer = decoder.SeededScorer(len(vocab), args.seed)
    strategy = decoder.Temperature(1.0, args.seed)
    config = decoder.GenerationConfig(max_tokens=args.max_tokens)
    if store is None:
        raise ParsemaskError("bench requires --store")
    session = decoder.GenerationSession(engine, store, vocab, "", config)
    result = decoder.masked_generate(session, scorer, strategy)
    texts = []
    acc = ""
    for tid in result.token_ids:
        acc += vocab.tokens[tid]
        texts.append(acc)

    from .lr import StateCache, parse_incremental

    def run(cache_factory):
        cache = cache_factory()
        started = time.perf_counter()
        for text in texts:
            partial = engine.partial_lex(text)
            tokens = engine._parser_tokens(partial)
            parse_incremental(engine.table, cache, tokens)
        return time.perf_counter() - started

    t_incremental = run(StateCache)
    t_scratch = run(lambda: None)
    mask_times = []
    for text in texts:
        parsed = engine.parse_prefix(text)
        started = time.perf_counter()
        decoder.grammar_mask(parsed.accept_sequences, parsed.remainder, store, engine.dfas)
        mask_times.append(time.perf_counter() - started)
    record = {
        "record": "bench",
        "trace_steps": len(texts),
        "incremental_s": round(t_incremental, 4),
        "scratch_s": round(t_scratch, 4),
        "speedup": round(t_scratch / t_incremental, 2) if t_incremental else None,
        "mask_mean_ms": round(1e3 * statistics.fmean(mask_times), 4) if mask_times else None,
        "mask_p95_ms": round(1e3 * sorted(mask_times)[int(0.95 * (len(mask_times) - 1))], 4)
        if mask_times
        else None,
    }
    out.emit(
        record,
        f"{len(texts)} steps: incremental {t_incremental:.3f}s vs scratch "
        f"{t_scratch:.3f}s ({record['speedup']}x); grammar_mask mean "
        f"{record['mask_mean_ms']}ms p95 {record['mask_p95_ms']}ms",
    )
    return EXIT_OK


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parsemask",
        description="grammar-constrained decoding engine",
    )
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument(
        "--json-lines", action="store_true", help="one JSON record per line"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, vocab_store=False):
        p.add_argument("--grammar", required=False, help="grammar file")
        p.add_argument("--parser", choices=("lr1", "lalr1"), default=None)
        if vocab_store:
            p.add_argument("--vocab", required=False)
            p.add_argument("--store", required=False)

    p = sub.add_parser("compile", help="parse/validate a grammar and report stats")
    common(p)
    p.add_argument("--emit-table-stats", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("build-store", help="precompute the DFA mask store")
    common(p, vocab_store=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_store)

    p = sub.add_parser("check", help="membership of a string (or - for stdin)")
    common(p)
    p.add_argument("--prefix", action="store_true", help="prefix membership")
    p.add_argument("--dump-tokens", action="store_true")
    p.add_argument("text")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("mask", help="allowed next tokens for a partial text")
    common(p, vocab_store=True)
    p.add_argument("--explain", action="store_true")
    p.add_argument("--verify", action="store_true", help="cross-check with the oracle")
    p.add_argument("text")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("generate", help="run masked generation")
    common(p, vocab_store=True)
    p.add_argument("--scorer", default="uniform")
    p.add_argument("--strategy", default="greedy")
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--prompt", default="")
    p.add_argument("--stop", action="append")
    p.add_argument("--opportunistic", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="incremental-vs-scratch parse and mask timing")
    common(p, vocab_store=True)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_bench)
    return parser


_DEFAULTS = {"parser": "lr1", "max_tokens": 256, "seed": 0}


def main(argv=None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        # flags > config file > env > defaults
        for key in ("grammar", "vocab", "store"):
            if getattr(args, key, None) is None and key in config:
                setattr(args, key, config[key])
        for key, default in _DEFAULTS.items():
            if getattr(args, key, "missing") is None:
                value = config.get(key, default)
                caster = type(default)
                setattr(args, key, caster(value))
        if getattr(args, "grammar", None) is None:
            print("error: --grammar is required", file=sys.stderr)
            return EXIT_GRAMMAR
        return args.func(args, _Out(args.json_lines))
    except (GrammarSyntaxError, GrammarValidationError, LrConflictError) as e:
        print(f"grammar error: {e}", file=sys.stderr)
        return EXIT_GRAMMAR
    except (ResourceLimitError,) as e:
        print(f"resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCES
    except (PromptNotInLanguageError, LexError, ParseError) as e:
        print(f"membership error: {e}", file=sys.stderr)
        return EXIT_MEMBERSHIP
    except (ScorerProtocolError, StoreFormatError, VocabularyFormatError) as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ParsemaskError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
