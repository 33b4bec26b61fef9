"""Core domain types: vocabulary, token sequences, segments, spans.

All types here are immutable after construction and safe to share across
concurrent workers. Token positions are 1-based throughout the package.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Iterable

TokenizeMode = str  # "char" | "whitespace"


class LsalignError(Exception):
    """Base class for all package errors."""


class ValidationError(LsalignError):
    """Malformed or inconsistent input data."""


class EmptyTranscript(ValidationError):
    """Transcript text is empty after normalization."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered set of distinct token strings plus a reserved end-of-sentence id.

    Token ids are 0..V-1 in list order; the eos id is V and is never a
    transcript token.
    """

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if not tok:
                raise ValidationError("vocabulary token must be non-empty")
            if tok in index:
                raise ValidationError(f"duplicate vocabulary token: {tok!r}")
            index[tok] = i
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ValidationError(f"token not in vocabulary: {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise ValidationError(f"token id out of range: {token_id}")
        return self.tokens[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def extended(self, new_tokens: Iterable[str]) -> Vocabulary:
        """Return a vocabulary with unseen tokens appended in first-seen order."""
        extra = [t for t in dict.fromkeys(new_tokens) if t not in self._index]
        if not extra:
            return self
        return Vocabulary(self.tokens + tuple(extra))


@dataclass(frozen=True)
class TokenSequence:
    """A transcript as vocabulary indices. Positions are 1-based."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.ids) < 1:
            raise ValidationError("token sequence must contain at least one token")

    def __len__(self) -> int:
        return len(self.ids)

    def token_id_at(self, position: int) -> int:
        """Token id at 1-based position."""
        if not 1 <= position <= len(self.ids):
            raise ValidationError(f"position {position} outside [1, {len(self.ids)}]")
        return self.ids[position - 1]

    def slice_ids(self, l_s: int, l_e: int) -> tuple[int, ...]:
        """Ids of the inclusive 1-based span [l_s, l_e]."""
        if not 1 <= l_s <= l_e <= len(self.ids):
            raise ValidationError(f"invalid span [{l_s}, {l_e}] for length {len(self.ids)}")
        return self.ids[l_s - 1 : l_e]

    def validate_against(self, vocab: Vocabulary) -> None:
        for i in self.ids:
            if not 0 <= i < vocab.size:
                raise ValidationError(f"token id {i} invalid for vocabulary of size {vocab.size}")


@dataclass(frozen=True)
class Span:
    """Inclusive 1-based token span [l_s, l_e]."""

    l_s: int
    l_e: int

    def __post_init__(self) -> None:
        if not 1 <= self.l_s <= self.l_e:
            raise ValidationError(f"invalid span [{self.l_s}, {self.l_e}]")

    def __len__(self) -> int:
        return self.l_e - self.l_s + 1


@dataclass(frozen=True, order=True)
class Segment:
    """One pre-split audio interval. Acoustics live behind the scorer."""

    start_sec: float
    end_sec: float
    segment_id: str
    recording_id: str

    def __post_init__(self) -> None:
        if self.start_sec < 0:
            raise ValidationError(f"segment {self.segment_id}: negative start time")
        if self.end_sec <= self.start_sec:
            raise ValidationError(
                f"segment {self.segment_id}: end {self.end_sec} must exceed start {self.start_sec}"
            )

    @property
    def duration_sec(self) -> float:
        return self.end_sec - self.start_sec


def tokenize(
    text: str,
    mode: TokenizeMode = "char",
    vocab: Vocabulary | None = None,
    *,
    extend: bool = True,
) -> tuple[TokenSequence, Vocabulary]:
    """Tokenize text and return the sequence plus the (possibly grown) vocabulary.

    char mode: NFC-normalize, drop all whitespace, one token per scalar value.
    whitespace mode: tokens are maximal non-whitespace runs. Punctuation is
    kept either way; stripping it is the caller's choice.

    With ``extend=False`` unseen tokens raise ValidationError instead of
    growing the vocabulary (used when a fixed vocabulary must be honored).
    """
    if mode not in ("char", "whitespace"):
        raise ValidationError(f"unknown tokenize mode: {mode!r}")
    normalized = unicodedata.normalize("NFC", text)
    if mode == "char":
        parts = [ch for ch in normalized if not ch.isspace()]
    else:
        parts = normalized.split()
    if not parts:
        raise EmptyTranscript("transcript is empty after normalization")
    vocab = vocab if vocab is not None else Vocabulary(())
    if extend:
        vocab = vocab.extended(parts)
    ids = tuple(vocab.id_of(tok) for tok in parts)
    return TokenSequence(ids), vocab


def detokenize(ids: Iterable[int], vocab: Vocabulary, mode: TokenizeMode = "char") -> str:
    """Inverse of tokenize up to whitespace: chars concatenate, words join on space."""
    joiner = "" if mode == "char" else " "
    return joiner.join(vocab.token_of(i) for i in ids)


def validate_recording_segments(segments: Iterable[Segment]) -> list[Segment]:
    """Sort one recording's segments by start time and check the invariants."""
    segs = sorted(segments, key=lambda s: (s.start_sec, s.end_sec, s.segment_id))
    if not segs:
        raise ValidationError("recording has no segments")
    recording_id = segs[0].recording_id
    seen: set[str] = set()
    prev_end = None
    for seg in segs:
        if seg.recording_id != recording_id:
            raise ValidationError(
                f"segment {seg.segment_id}: recording {seg.recording_id} != {recording_id}"
            )
        if seg.segment_id in seen:
            raise ValidationError(f"duplicate segment id: {seg.segment_id}")
        seen.add(seg.segment_id)
        if prev_end is not None and seg.start_sec < prev_end:
            raise ValidationError(
                f"segment {seg.segment_id} overlaps previous segment (starts at "
                f"{seg.start_sec} before {prev_end})"
            )
        prev_end = seg.end_sec
    return segs
