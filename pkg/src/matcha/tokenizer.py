"""Byte-level BPE tokenization over a GPT-2 style vocabulary.

Texts are mapped to ids that index the pre-trained embedding table, so the
vocabulary and merge rules must be the ones the table was built with.  A
small word-level fallback tokenizer is provided for self-contained runs
where no vocabulary files are available.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import (
    EmptyInputError,
    TokenRangeError,
    VocabularyFormatError,
    VocabularyIntegrityError,
)

DEFAULT_MAX_LEN = 512

# GPT-2 style pretokenization: contractions, words with an optional leading
# space, digit runs, punctuation runs, whitespace runs.  Merges never cross
# pretoken boundaries.  Stdlib approximation of the original pattern:
# [^\W\d_] stands in for \p{L} and \d for \p{N}.
_PRETOKEN = re.compile(
    r"'s|'t|'re|'ve|'m|'ll|'d"
    r"| ?[^\W\d_]+"
    r"| ?\d+"
    r"| ?(?:[^\s\w]|_)+"
    r"|\s+(?!\S)"
    r"|\s+"
)


def byte_to_unicode() -> dict[int, str]:
    """Bijection between the 256 byte values and printable unicode stand-ins.

    Printable bytes map to themselves; the rest are shifted into the
    private range starting at U+0100 so every byte has a visible character.
    """
    keep = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    mapping = {b: chr(b) for b in keep}
    shift = 0
    for b in range(256):
        if b not in mapping:
            mapping[b] = chr(256 + shift)
            shift += 1
    return mapping


@dataclass
class Vocabulary:
    """Immutable token table plus ordered byte-pair merge rules."""

    token_to_id: dict[str, int]
    merges: list[tuple[str, str]]
    byte_encoder: dict[int, str] = field(default_factory=byte_to_unicode)

    def __post_init__(self) -> None:
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self.merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self.byte_decoder = {c: b for b, c in self.byte_encoder.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.token_to_id)

    def encode(self, text: str, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
        return encode(self, text, max_len)

    def decode(self, ids: list[int]) -> str:
        return decode(self, ids)


def load_vocabulary(vocab_file: str, merges_file: str) -> Vocabulary:
    """Load a token->id JSON object and a merges text file (header + "left right" lines)."""
    with open(vocab_file, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise VocabularyFormatError(
                f"{vocab_file}: invalid JSON at line {exc.lineno}, column {exc.colno}"
            ) from exc
    if not isinstance(raw, dict):
        raise VocabularyFormatError(f"{vocab_file}: expected a JSON object of token -> id")

    token_to_id: dict[str, int] = {}
    seen_ids: set[int] = set()
    for token, token_id in raw.items():
        if not isinstance(token_id, int) or isinstance(token_id, bool):
            raise VocabularyFormatError(f"{vocab_file}: id for token {token!r} is not an integer")
        if token_id in seen_ids:
            raise VocabularyIntegrityError(f"{vocab_file}: duplicate id {token_id}")
        seen_ids.add(token_id)
        token_to_id[token] = token_id
    n = len(token_to_id)
    if seen_ids and (min(seen_ids) != 0 or max(seen_ids) != n - 1):
        raise VocabularyIntegrityError(
            f"{vocab_file}: ids must cover [0, {n}) exactly, got [{min(seen_ids)}, {max(seen_ids)}]"
        )

    merges: list[tuple[str, str]] = []
    with open(merges_file, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for lineno, line in enumerate(lines[1:], start=2):  # first line is a header
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise VocabularyFormatError(
                f"{merges_file}:{lineno}: expected 'left right', got {line!r}"
            )
        left, right = parts
        for piece in (left, right, left + right):
            if piece not in token_to_id:
                raise VocabularyIntegrityError(
                    f"{merges_file}:{lineno}: merge references {piece!r} absent from vocabulary"
                )
        merges.append((left, right))

    return Vocabulary(token_to_id=token_to_id, merges=merges)


def _apply_merges(vocab: Vocabulary, symbols: list[str]) -> list[str]:
    """Repeatedly merge the adjacent pair with the lowest rank."""
    ranks = vocab.merge_ranks
    while len(symbols) > 1:
        pairs = set(zip(symbols, symbols[1:]))
        best = min(pairs, key=lambda p: ranks.get(p, float("inf")))
        if best not in ranks:
            break
        left, right = best
        merged: list[str] = []
        i = 0
        while i < len(symbols):
            if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
                merged.append(left + right)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def encode(vocab: Vocabulary, text: str, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    """Encode text to vocabulary ids, truncated to max_len tokens.

    Deterministic: pretokenize, map each pretoken's bytes to the unicode
    stand-ins, apply lowest-rank-first merges within the pretoken, look the
    resulting symbols up in the token table.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if not text:
        raise EmptyInputError("cannot encode an empty text")
    ids: list[int] = []
    for pretoken in _PRETOKEN.findall(text):
        symbols = [vocab.byte_encoder[b] for b in pretoken.encode("utf-8")]
        for symbol in _apply_merges(vocab, symbols):
            try:
                ids.append(vocab.token_to_id[symbol])
            except KeyError:
                raise VocabularyIntegrityError(
                    f"symbol {symbol!r} not covered by the vocabulary"
                ) from None
        if len(ids) >= max_len:
            break
    return ids[:max_len]


def decode(vocab: Vocabulary, ids: list[int]) -> str:
    """Invert encode: ids -> token strings -> bytes -> UTF-8 text."""
    chunks: list[str] = []
    for token_id in ids:
        token = vocab.id_to_token.get(token_id)
        if token is None:
            raise TokenRangeError(f"id {token_id} outside [0, {vocab.vocab_size})")
        chunks.append(token)
    data = bytes(vocab.byte_decoder[c] for c in "".join(chunks))
    return data.decode("utf-8", errors="replace")


@dataclass
class WordVocabulary:
    """Whitespace word-level fallback with a corpus-built id map.

    Unknown words map to the reserved <unk> entry.  Round trips are exact
    only up to whitespace normalization; the BPE path is the lossless one.
    """

    token_to_id: dict[str, int]

    UNK = "<unk>"

    def __post_init__(self) -> None:
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.token_to_id)

    def encode(self, text: str, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        words = text.split()
        if not words:
            raise EmptyInputError("cannot encode an empty text")
        unk = self.token_to_id[self.UNK]
        return [self.token_to_id.get(w, unk) for w in words[:max_len]]

    def decode(self, ids: list[int]) -> str:
        words = []
        for token_id in ids:
            token = self.id_to_token.get(token_id)
            if token is None:
                raise TokenRangeError(f"id {token_id} outside [0, {self.vocab_size})")
            words.append(token)
        return " ".join(words)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"kind": "word", "token_to_id": self.token_to_id}, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str) -> "WordVocabulary":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict) or raw.get("kind") != "word":
            raise VocabularyFormatError(f"{path}: not a word-level vocabulary file")
        return cls(token_to_id={str(k): int(v) for k, v in raw["token_to_id"].items()})


def build_word_vocabulary(texts) -> WordVocabulary:
    """Assign ids to the sorted unique whitespace tokens of a corpus."""
    words = sorted({w for text in texts for w in text.split()})
    token_to_id = {WordVocabulary.UNK: 0}
    for word in words:
        if word not in token_to_id:
            token_to_id[word] = len(token_to_id)
    return WordVocabulary(token_to_id=token_to_id)
