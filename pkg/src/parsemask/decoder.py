"""Masked generation loop: score, mask, renormalize, select.

Per step the engine lexes and parses the accumulated text, builds the
accept sequences and remainder, unions the precomputed store rows the
remainder walk selects (the grammar mask), forces the EOS bit to
whole-sentence membership, and hands the masked renormalized distribution
to a decoding strategy. Any scorer that returns one score per vocabulary
entry plugs in; masking happens on post-softmax probabilities and the
surviving mass is rescaled to 1 so downstream strategies see a proper
distribution.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .automata import TerminalDfaSet
from .engine import GrammarEngine, ParsedPrefix
from .errors import (
    LexError,
    ParseError,
    PromptNotInLanguageError,
    ScorerProtocolError,
    StuckStateError,
)
from .lr import StateCache
from .masks import MaskStore, VocabMask, Vocabulary, mask_apply


def grammar_mask(
    accept_sequences,
    remainder: str,
    store: MaskStore,
    dfas: TerminalDfaSet,
) -> VocabMask:
    """Union of store rows over all accept sequences (one DFA walk each).

    For each sequence the remainder is walked over the first terminal's
    DFA; a dead end contributes nothing, otherwise the row for the reached
    state (and the one lookahead terminal, if any) joins the union. An
    all-zero result is legal and signals a stuck state upstream.
    """
    mask = VocabMask.zeros(store.vocab_size)
    for seq in accept_sequences:
        first = seq[0]
        dfa = dfas[first]
        q = dfa.walk(dfa.start, remainder)
        if q not in dfa.live:
            continue
        gid = dfas.global_id(first, q)
        if len(seq) == 1:
            mask = mask | store.m0(gid)
        else:
            mask = mask | store.m1(gid, seq[1])
    return mask


def effective_mask(
    engine: GrammarEngine,
    store: MaskStore,
    vocab: Vocabulary,
    text: str,
    parsed: ParsedPrefix | None = None,
) -> VocabMask:
    """Grammar mask with the EOS bit forced to sentence membership."""
    if parsed is None:
        parsed = engine.parse_prefix(text)
    mask = grammar_mask(parsed.accept_sequences, parsed.remainder, store, engine.dfas)
    return mask.with_bit(vocab.eos_index, engine.is_complete(text))


# --------------------------------------------------------------------------
# Scorers


class UniformScorer:
    def __init__(self, width: int):
        self.width = width

    def __call__(self, history) -> np.ndarray:
        return np.ones(self.width, dtype=np.float64)


class SeededScorer:
    """Reproducible random scores; a fresh stream per (seed, step)."""

    def __init__(self, width: int, seed: int):
        self.width = width
        self.seed = seed

    def __call__(self, history) -> np.ndarray:
        rng = np.random.default_rng((self.seed, len(history)))
        return rng.standard_normal(self.width)


class ScriptScorer:
    """Replays recorded score vectors, one whitespace-separated line per step."""

    def __init__(self, vectors):
        self.vectors = [np.asarray(v, dtype=np.float64) for v in vectors]

    @classmethod
    def from_file(cls, path: str, width: int) -> "ScriptScorer":
        vectors = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                values = [float(x) for x in line.split()]
                if len(values) != width:
                    raise ScorerProtocolError(
                        f"{path}:{line_no}: expected {width} scores, got {len(values)}"
                    )
                vectors.append(values)
        return cls(vectors)

    def __call__(self, history) -> np.ndarray:
        step = len(history)
        if step >= len(self.vectors):
            raise ScorerProtocolError(
                f"script scorer exhausted after {len(self.vectors)} steps"
            )
        return self.vectors[step]


class ExternalScorer:
    """Scorer backed by a peer process speaking the line protocol.

    Request:  ``SCORE <session> <step> <k> <id_1> ... <id_k>``
    Response: one line of exactly ``|V|`` ASCII decimal scores
    Event:    ``CHOSEN <session> <step> <token_id>`` after selection
    """

    def __init__(self, command: str, width: int, session_id: str = "s0"):
        self.width = width
        self.session_id = session_id
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._step = 0

    def __call__(self, history) -> np.ndarray:
        ids = " ".join(str(i) for i in history)
        line = f"SCORE {self.session_id} {len(history)} {len(history)}"
        if ids:
            line += " " + ids
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
            reply = self.proc.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise ScorerProtocolError(f"peer pipe failed: {e}") from e
        if not reply:
            raise ScorerProtocolError("peer closed the stream mid-generation")
        parts = reply.split()
        try:
            values = [float(x) for x in parts]
        except ValueError as e:
            raise ScorerProtocolError(f"peer sent a non-numeric score: {e}") from e
        if len(values) != self.width:
            raise ScorerProtocolError(
                f"peer sent {len(values)} scores, expected {self.width}"
            )
        return np.asarray(values, dtype=np.float64)

    def notify_chosen(self, step: int, token_id: int) -> None:
        try:
            self.proc.stdin.write(f"CHOSEN {self.session_id} {step} {token_id}\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ScorerProtocolError(f"peer pipe failed: {e}") from e

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=5)


# --------------------------------------------------------------------------
# Decode strategies


def _softmax(scores: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64) / max(temperature, 1e-12)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class Greedy:
    name = "greedy"

    def select(self, probs: np.ndarray, rng) -> int:
        return int(np.argmax(probs))


@dataclass
class Temperature:
    temperature: float = 1.0
    seed: int = 0
    name = "temperature"

    def select(self, probs: np.ndarray, rng) -> int:
        return int(rng.choice(len(probs), p=probs))


@dataclass
class TopP:
    p: float = 0.95
    temperature: float = 1.0
    seed: int = 0
    name = "top_p"

    def select(self, probs: np.ndarray, rng) -> int:
        order = np.argsort(-probs, kind="stable")
        csum = np.cumsum(probs[order])
        keep = int(np.searchsorted(csum, self.p) + 1)
        chosen = order[:keep]
        sub = probs[chosen]
        sub = sub / sub.sum()
        return int(chosen[rng.choice(len(chosen), p=sub)])


@dataclass
class TopK:
    k: int = 40
    temperature: float = 1.0
    seed: int = 0
    name = "top_k"

    def select(self, probs: np.ndarray, rng) -> int:
        order = np.argsort(-probs, kind="stable")[: self.k]
        sub = probs[order]
        total = sub.sum()
        if total <= 0:
            return int(order[0])
        sub = sub / total
        return int(order[rng.choice(len(order), p=sub)])


def parse_strategy(spec: str):
    """CLI strategy syntax: greedy | temp:<t>[:seed] | topp:<p>[:t][:seed] | topk:<k>[:t][:seed]."""
    parts = spec.split(":")
    kind = parts[0]
    if kind == "greedy":
        return Greedy()
    if kind == "temp":
        t = float(parts[1]) if len(parts) > 1 else 1.0
        seed = int(parts[2]) if len(parts) > 2 else 0
        return Temperature(t, seed)
    if kind == "topp":
        p = float(parts[1]) if len(parts) > 1 else 0.95
        t = float(parts[2]) if len(parts) > 2 else 1.0
        seed = int(parts[3]) if len(parts) > 3 else 0
        return TopP(p, t, seed)
    if kind == "topk":
        k = int(parts[1]) if len(parts) > 1 else 40
        t = float(parts[2]) if len(parts) > 2 else 1.0
        seed = int(parts[3]) if len(parts) > 3 else 0
        return TopK(k, t, seed)
    raise ValueError(f"unknown strategy {spec!r}")


# --------------------------------------------------------------------------
# Sessions and the generation loop


@dataclass
class GenerationConfig:
    max_tokens: int = 256
    stop_strings: tuple[str, ...] = ()
    opportunistic: bool = False


@dataclass
class StepTrace:
    text_before: str
    mask: VocabMask
    prob_sum: float | None
    chosen: int | None


class GenerationSession:
    """One generation: prompt, accumulated text, history, parser cache."""

    def __init__(
        self,
        engine: GrammarEngine,
        store: MaskStore,
        vocab: Vocabulary,
        prompt: str = "",
        config: GenerationConfig | None = None,
    ):
        self.engine = engine
        self.store = store
        self.vocab = vocab
        self.prompt = prompt
        self.text = prompt
        self.history: list[int] = []
        self.cache: StateCache = engine.new_cache()
        self.config = config or GenerationConfig()
        self.finish_reason: str | None = None
        self.stats = {"steps": 0, "opportunistic_hits": 0}
        if prompt and not engine.prefix_valid(prompt):
            raise PromptNotInLanguageError(
                f"prompt is not a valid partial output: {prompt!r}"
            )

    def parse_state(self) -> ParsedPrefix:
        try:
            return self.engine.parse_prefix(self.text, self.cache)
        except (LexError, ParseError) as e:
            # Masks make this unreachable mid-generation; surfacing it loudly
            # beats guessing.
            raise AssertionError(
                f"internal invariant violated: generated text stopped parsing: {e}"
            ) from e

    def _token_valid(self, parsed: ParsedPrefix, token_id: int) -> bool:
        """Store-free validity check used by opportunistic mode: direct
        DFA-walk matching of the proposed token against the accept
        sequences (same semantics as the corresponding mask bit)."""
        from .automata import dmatch

        if token_id == self.vocab.eos_index:
            return self.engine.is_complete(self.text)
        surface = self.vocab.tokens[token_id]
        r = parsed.remainder
        for seq in parsed.accept_sequences:
            first = seq[0]
            dfa = self.engine.dfas[first]
            q = dfa.walk(dfa.start, r)
            if q not in dfa.live:
                continue
            if dmatch(self.engine.dfas, first, q, surface, seq[1:]):
                return True
        return False


@dataclass
class GenerationResult:
    text: str
    finish_reason: str
    steps: int
    token_ids: list[int]
    traces: list[StepTrace] | None = None


def step(
    session: GenerationSession,
    scores: np.ndarray,
    strategy,
    rng: np.random.Generator | None = None,
    trace: StepTrace | None = None,
) -> int | None:
    """One masked selection; appends the choice and returns its id.

    Returns None when generation cannot continue (stuck: empty mask with
    EOS forbidden). Returning the EOS id finishes the session without
    appending text.
    """
    if len(scores) != len(session.vocab):
        raise ScorerProtocolError(
            f"scores width {len(scores)} != vocabulary size {len(session.vocab)}"
        )
    if rng is None:
        rng = np.random.default_rng(getattr(strategy, "seed", 0))
    vocab = session.vocab
    parsed = session.parse_state()

    if session.config.opportunistic:
        probs = _softmax(scores, getattr(strategy, "temperature", 1.0))
        proposal = strategy.select(probs, rng)
        if session._token_valid(parsed, proposal):
            session.stats["opportunistic_hits"] += 1
            _commit(session, proposal)
            if trace is not None:
                trace.prob_sum = None
                trace.chosen = proposal
            return proposal

    mask = grammar_mask(
        parsed.accept_sequences, parsed.remainder, session.store, session.engine.dfas
    )
    mask = mask.with_bit(vocab.eos_index, session.engine.is_complete(session.text))
    if trace is not None:
        trace.mask = mask
    if mask.count() == 0:
        session.finish_reason = "stuck"
        return None
    probs = _softmax(scores, getattr(strategy, "temperature", 1.0))
    masked = mask_apply(mask, probs)
    if trace is not None:
        trace.prob_sum = float(masked.sum())
    chosen = strategy.select(masked, rng)
    _commit(session, chosen)
    if trace is not None:
        trace.chosen = chosen
    return chosen


def _commit(session: GenerationSession, token_id: int) -> None:
    session.stats["steps"] += 1
    if token_id == session.vocab.eos_index:
        session.finish_reason = "eos"
        return
    session.history.append(token_id)
    session.text += session.vocab.tokens[token_id]


def masked_generate(
    session: GenerationSession,
    scorer,
    strategy,
    collect_traces: bool = False,
) -> GenerationResult:
    """Run the loop until EOS, a stop string, max tokens, or a stuck state."""
    rng = np.random.default_rng(getattr(strategy, "seed", 0))
    traces: list[StepTrace] | None = [] if collect_traces else None
    notify = getattr(scorer, "notify_chosen", None)
    while session.stats["steps"] < session.config.max_tokens:
        scores = scorer(session.history)
        trace = StepTrace(session.text, VocabMask.zeros(len(session.vocab)), None, None)
        chosen = step(session, scores, strategy, rng, trace)
        if traces is not None:
            traces.append(trace)
        if chosen is None:
            break
        if notify is not None:
            notify(session.stats["steps"] - 1, chosen)
        if session.finish_reason == "eos":
            break
        generated = session.text[len(session.prompt) :]
        hit = _find_stop(generated, session.config.stop_strings)
        if hit is not None:
            session.text = session.prompt + generated[:hit]
            session.finish_reason = "stop_string"
            break
    if session.finish_reason is None:
        session.finish_reason = "max_tokens"
    return GenerationResult(
        text=session.text,
        finish_reason=session.finish_reason,
        steps=session.stats["steps"],
        token_ids=list(session.history),
        traces=traces,
    )


def _find_stop(generated: str, stops) -> int | None:
    for stop in stops:
        idx = generated.find(stop)
        if idx >= 0:
            return idx
    return None
