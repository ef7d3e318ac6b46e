"""Vocabulary handling, bitmasks, and the precomputed DFA mask store.

The store keeps two tables over the global DFA state index:

* ``m0[q]``    — tokens whose walk from ``q`` stays matchable with no
  following terminal considered,
* ``m1[q, τ]`` — tokens matchable from ``q`` when terminal ``τ`` may follow.

Bit ``t`` of a row is exactly the DFA-walk partial match of token ``t``
from that state, so rows can be verified by recomputing matches directly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .automata import TerminalDfaSet
from .errors import (
    MaskWidthError,
    ResourceLimitError,
    StoreFormatError,
    StoreHashMismatchError,
    VocabularyFormatError,
)
from .grammar import Grammar

_MAGIC = b"PMSTORE1"
_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token surface strings plus the index of the EOS entry."""

    tokens: tuple[str, ...]
    eos_index: int

    def __post_init__(self):
        if not (0 <= self.eos_index < len(self.tokens)):
            raise VocabularyFormatError(
                f"eos_index {self.eos_index} out of range for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def byte_lengths(self) -> tuple[int, ...]:
        return tuple(len(t.encode("utf-8")) for t in self.tokens)

    def digest(self) -> bytes:
        payload = json.dumps(
            {"tokens": list(self.tokens), "eos_index": self.eos_index},
            ensure_ascii=True,
            separators=(",", ":"),
        ).encode("ascii")
        return hashlib.sha256(payload).digest()


def load_vocabulary(path: str) -> Vocabulary:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise VocabularyFormatError(f"cannot read vocabulary {path}: {e}") from e
    if not isinstance(data, dict) or "tokens" not in data:
        raise VocabularyFormatError("vocabulary file must be an object with 'tokens'")
    tokens = data["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise VocabularyFormatError("'tokens' must be a list of strings")
    if "eos_index" not in data:
        raise VocabularyFormatError("vocabulary file is missing 'eos_index'")
    return Vocabulary(tuple(tokens), int(data["eos_index"]))


def save_vocabulary(vocab: Vocabulary, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"tokens": list(vocab.tokens), "eos_index": vocab.eos_index},
            fh,
            ensure_ascii=True,
            indent=0,
        )
        fh.write("\n")


class VocabMask:
    """Fixed-width bitset over the vocabulary, backed by one Python int."""

    __slots__ = ("bits", "width")

    def __init__(self, width: int, bits: int = 0):
        self.width = width
        self.bits = bits & ((1 << width) - 1)

    @classmethod
    def zeros(cls, width: int) -> "VocabMask":
        return cls(width, 0)

    @classmethod
    def ones(cls, width: int) -> "VocabMask":
        return cls(width, (1 << width) - 1)

    @classmethod
    def from_indices(cls, width: int, indices) -> "VocabMask":
        bits = 0
        for i in indices:
            bits |= 1 << i
        return cls(width, bits)

    @classmethod
    def from_bool_array(cls, arr: np.ndarray) -> "VocabMask":
        packed = np.packbits(arr.astype(np.uint8), bitorder="little")
        return cls(len(arr), int.from_bytes(packed.tobytes(), "little"))

    def to_bool_array(self) -> np.ndarray:
        nbytes = (self.width + 7) // 8
        raw = np.frombuffer(self.bits.to_bytes(nbytes, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.width].astype(bool)

    def test(self, index: int) -> bool:
        return bool((self.bits >> index) & 1)

    def with_bit(self, index: int, value: bool) -> "VocabMask":
        if value:
            return VocabMask(self.width, self.bits | (1 << index))
        return VocabMask(self.width, self.bits & ~(1 << index))

    def indices(self) -> list[int]:
        out = []
        bits = self.bits
        i = 0
        while bits:
            if bits & 1:
                out.append(i)
            bits >>= 1
            i += 1
        return out

    def count(self) -> int:
        return self.bits.bit_count()

    def __or__(self, other: "VocabMask") -> "VocabMask":
        if self.width != other.width:
            raise MaskWidthError(f"mask widths differ: {self.width} vs {other.width}")
        return VocabMask(self.width, self.bits | other.bits)

    def __and__(self, other: "VocabMask") -> "VocabMask":
        if self.width != other.width:
            raise MaskWidthError(f"mask widths differ: {self.width} vs {other.width}")
        return VocabMask(self.width, self.bits & other.bits)

    def is_subset(self, other: "VocabMask") -> bool:
        return (self.bits & ~other.bits) == 0

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VocabMask)
            and self.width == other.width
            and self.bits == other.bits
        )

    def __hash__(self):
        return hash((self.width, self.bits))

    def __repr__(self):
        return f"VocabMask(width={self.width}, set={self.count()})"


def mask_union(a: VocabMask, b: VocabMask) -> VocabMask:
    return a | b


def mask_apply(mask: VocabMask, scores: np.ndarray) -> np.ndarray:
    """Zero out masked entries and renormalize by the surviving mass."""
    if len(scores) != mask.width:
        raise MaskWidthError(
            f"scores width {len(scores)} != mask width {mask.width}"
        )
    out = np.where(mask.to_bool_array(), np.asarray(scores, dtype=np.float64), 0.0)
    total = out.sum()
    if total > 0.0:
        out = out / total
    return out


class MaskStore:
    """Dense m0/m1 bitmask tables over the global DFA state index."""

    def __init__(
        self,
        m0: np.ndarray,  # uint64 [n_states, row_words]
        m1: np.ndarray,  # uint64 [n_states * n_terminals, row_words]
        n_states: int,
        terminal_order: tuple[str, ...],
        vocab_size: int,
        grammar_hash: bytes,
        vocab_hash: bytes,
    ):
        self._m0 = m0
        self._m1 = m1
        self.n_states = n_states
        self.terminal_order = terminal_order
        self.terminal_index = {t: i for i, t in enumerate(terminal_order)}
        self.vocab_size = vocab_size
        self.grammar_hash = grammar_hash
        self.vocab_hash = vocab_hash
        self._cache: dict[tuple[int, int], VocabMask] = {}
        self.lookups = 0  # instrumentation for opportunistic-mode tests

    def _row(self, table: np.ndarray, idx: int) -> VocabMask:
        raw = table[idx].tobytes()
        bits = int.from_bytes(raw, "little")
        return VocabMask(self.vocab_size, bits)

    def m0(self, gid: int) -> VocabMask:
        self.lookups += 1
        key = (-1, gid)
        mask = self._cache.get(key)
        if mask is None:
            mask = self._row(self._m0, gid)
            self._cache[key] = mask
        return mask

    def m1(self, gid: int, terminal: str) -> VocabMask:
        self.lookups += 1
        tid = self.terminal_index[terminal]
        key = (tid, gid)
        mask = self._cache.get(key)
        if mask is None:
            mask = self._row(self._m1, gid * len(self.terminal_order) + tid)
            self._cache[key] = mask
        return mask

    def nbytes(self) -> int:
        return self._m0.nbytes + self._m1.nbytes


def _encode_tokens(dfa, tokens: tuple[str, ...], max_len: int):
    """Class-id matrix [n_tokens, max_len] for one DFA, padded with an
    identity class so walks freeze once a token is exhausted."""
    n_classes = len(dfa.class_starts)
    starts = np.asarray(dfa.class_starts, dtype=np.int64)
    lengths = np.array([len(t) for t in tokens], dtype=np.int64)
    cls = np.full((len(tokens), max_len), n_classes, dtype=np.int32)
    flat_cp = np.array(
        [ord(c) for t in tokens for c in t], dtype=np.int64
    )
    flat_cls = np.searchsorted(starts, flat_cp, side="right") - 1
    pos = 0
    for i, t in enumerate(tokens):
        ln = len(t)
        cls[i, :ln] = flat_cls[pos : pos + ln]
        pos += ln
    return cls, lengths


def _extended_transitions(dfa) -> np.ndarray:
    """Transition table with one extra identity column for padding."""
    n_states = dfa.n_states
    n_classes = len(dfa.class_starts)
    trans = np.empty((n_states, n_classes + 1), dtype=np.int32)
    for q in range(n_states):
        trans[q, :n_classes] = dfa.transitions[q]
        trans[q, n_classes] = q
    return trans


def _suffix_match_from_start(dfa, cls, lengths, max_len):
    """SUF[t, i]: does token t's suffix starting at i partially match the
    terminal from its start state (live end, or a final strictly inside)."""
    n_tokens = cls.shape[0]
    trans = _extended_transitions(dfa)
    is_final = np.zeros(dfa.n_states, dtype=bool)
    is_final[list(dfa.finals)] = True
    is_live = np.zeros(dfa.n_states, dtype=bool)
    is_live[list(dfa.live)] = True
    suf = np.zeros((n_tokens, max_len + 1), dtype=bool)
    for offset in range(max_len + 1):
        valid = lengths >= offset
        st = np.full(n_tokens, dfa.start, dtype=np.int32)
        hit_final = np.zeros(n_tokens, dtype=bool)
        for j in range(offset, max_len):
            inside = j < lengths
            hit_final |= is_final[st] & inside
            st = trans[st, cls[:, j]]
        suf[:, offset] = valid & (is_live[st] | hit_final)
    return suf


def build_mask_store(
    dfas: TerminalDfaSet,
    grammar: Grammar,
    vocab: Vocabulary,
    max_cells: int = 2_000_000_000,
) -> MaskStore:
    """Precompute m0/m1 for every (global DFA state, lookahead terminal).

    Work is one vectorized walk per (state, token) plus per-terminal suffix
    tables; dead states come out all-zero because no walk from them is ever
    live or final.
    """
    tokens = vocab.tokens
    n_tokens = len(tokens)
    terminal_order = dfas.order
    n_terminals = len(terminal_order)
    if dfas.n_states * max(1, n_tokens) * max(1, n_terminals) > max_cells:
        raise ResourceLimitError(
            f"store of {dfas.n_states} states x {n_tokens} tokens x "
            f"{n_terminals} terminals exceeds the cell budget {max_cells}"
        )
    max_len = max((len(t) for t in tokens), default=0)
    row_words = max(1, (n_tokens + 63) // 64)

    m0 = np.zeros((dfas.n_states, row_words), dtype=np.uint64)
    m1 = np.zeros((dfas.n_states * n_terminals, row_words), dtype=np.uint64)

    # Per-terminal token encodings and suffix tables (walks from q0).
    encodings = {}
    suffix_tables = {}
    for name in terminal_order:
        dfa = dfas[name]
        cls, lengths = _encode_tokens(dfa, tokens, max_len)
        encodings[name] = (cls, lengths)
        suffix_tables[name] = _suffix_match_from_start(dfa, cls, lengths, max_len)

    position = np.arange(max_len + 1, dtype=np.int64)[None, :]

    def pack(row_bool: np.ndarray) -> np.ndarray:
        packed = np.packbits(row_bool.astype(np.uint8), bitorder="little")
        out = np.zeros(row_words * 8, dtype=np.uint8)
        out[: len(packed)] = packed
        return out.view(np.uint64)

    for name in terminal_order:
        dfa = dfas[name]
        cls, lengths = encodings[name]
        trans = _extended_transitions(dfa)
        is_final = np.zeros(dfa.n_states, dtype=bool)
        is_final[list(dfa.finals)] = True
        is_live = np.zeros(dfa.n_states, dtype=bool)
        is_live[list(dfa.live)] = True
        within = position <= lengths[:, None]  # split point i exists
        strict = position < lengths[:, None]  # split leaves a non-empty rest
        for q in range(dfa.n_states):
            gid = dfas.global_id(name, q)
            st = np.full(n_tokens, q, dtype=np.int32)
            final_at = np.zeros((n_tokens, max_len + 1), dtype=bool)
            for j in range(max_len + 1):
                final_at[:, j] = is_final[st]
                if j < max_len:
                    st = trans[st, cls[:, j]]
            final_at &= within
            live_end = is_live[st]
            m0_row = live_end | (final_at & strict).any(axis=1)
            m0[gid] = pack(m0_row)
            base = gid * n_terminals
            for tid, follow in enumerate(terminal_order):
                row = live_end | (final_at & suffix_tables[follow]).any(axis=1)
                m1[base + tid] = pack(row)

    return MaskStore(
        m0=m0,
        m1=m1,
        n_states=dfas.n_states,
        terminal_order=terminal_order,
        vocab_size=n_tokens,
        grammar_hash=grammar.digest(),
        vocab_hash=vocab.digest(),
    )


def save_store(store: MaskStore, path: str) -> None:
    header = struct.pack(
        "<8sII32s32sIIQI",
        _MAGIC,
        _VERSION,
        0,
        store.grammar_hash,
        store.vocab_hash,
        store.n_states,
        len(store.terminal_order),
        store.vocab_size,
        store._m0.shape[1],
    )
    names = "\n".join(store.terminal_order).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<I", len(names)))
        fh.write(names)
        fh.write(store._m0.astype("<u8").tobytes())
        fh.write(store._m1.astype("<u8").tobytes())


def load_store(
    path: str,
    grammar_hash: bytes | None = None,
    vocab_hash: bytes | None = None,
) -> MaskStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<8sII32s32sIIQI")
    if len(blob) < head_size + 4:
        raise StoreFormatError("store file is truncated")
    magic, version, _, ghash, vhash, n_states, n_terminals, vocab_size, row_words = (
        struct.unpack("<8sII32s32sIIQI", blob[:head_size])
    )
    if magic != _MAGIC:
        raise StoreFormatError("not a mask-store file")
    if version != _VERSION:
        raise StoreFormatError(f"unsupported store version {version}")
    if grammar_hash is not None and ghash != grammar_hash:
        raise StoreHashMismatchError("grammar")
    if vocab_hash is not None and vhash != vocab_hash:
        raise StoreHashMismatchError("vocabulary")
    offset = head_size
    (name_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    names = tuple(blob[offset : offset + name_len].decode("utf-8").split("\n"))
    offset += name_len
    m0_count = n_states * row_words
    m1_count = n_states * n_terminals * row_words
    expected = offset + (m0_count + m1_count) * 8
    if len(blob) != expected:
        raise StoreFormatError(
            f"store file has {len(blob)} bytes, expected {expected}"
        )
    m0 = np.frombuffer(blob, dtype="<u8", count=m0_count, offset=offset).reshape(
        n_states, row_words
    )
    offset += m0_count * 8
    m1 = np.frombuffer(blob, dtype="<u8", count=m1_count, offset=offset).reshape(
        n_states * n_terminals, row_words
    )
    return MaskStore(
        m0=m0.copy(),
        m1=m1.copy(),
        n_states=n_states,
        terminal_order=names,
        vocab_size=vocab_size,
        grammar_hash=ghash,
        vocab_hash=vhash,
    )
