"""Posterior-provider contract: the aligner's only view of a model.

A scorer answers "given this segment's acoustics and this teacher-forced
prefix, what is the next-token distribution over vocab plus eos". Forward
and backward scorers are independent instances of the same contract;
backward prefixes are transmitted in consumption order (first-consumed =
highest transcript position first).
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

from .core import LsalignError, Vocabulary

ROW_SUM_TOLERANCE = 1e-6


class ScorerError(LsalignError):
    """Base class for scorer-side failures."""


class UnknownSegment(ScorerError):
    """Request addressed a segment the scorer does not know."""


class ProtocolError(ScorerError):
    """Malformed request/response or violated row invariant."""


class DuplicateKey(ScorerError):
    """Scripted-scorer file defines the same request twice."""


class UnknownKey(ScorerError):
    """Strict scripted scorer got a request it has no row for."""


class IncompatibleScorer(ScorerError):
    """Handshake failed: vocabulary digest or protocol version mismatch."""


class Direction(enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"

    @classmethod
    def parse(cls, value: str) -> Direction:
        try:
            return cls(value)
        except ValueError:
            raise ProtocolError(f"unknown direction: {value!r}") from None


@dataclass(frozen=True)
class PosteriorRow:
    """One next-token distribution over vocab plus eos.

    ``probs`` is dense: index = token id, last index = eos. Rows must be
    non-negative and sum to 1 within 1e-6; construction enforces this so a
    row in hand is always valid.
    """

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.probs) < 2:
            raise ValueError("posterior row needs at least one token plus eos")
        total = 0.0
        for p in self.probs:
            if p < 0.0 or math.isnan(p):
                raise ValueError(f"negative or NaN probability in row: {p}")
            total += p
        if abs(total - 1.0) > ROW_SUM_TOLERANCE:
            raise ValueError(f"row sums to {total!r}, expected 1.0 within {ROW_SUM_TOLERANCE}")

    @property
    def eos_mass(self) -> float:
        return self.probs[-1]

    @property
    def vocab_size(self) -> int:
        return len(self.probs) - 1

    def mass(self, token_id: int) -> float:
        return self.probs[token_id]

    def eos_is_argmax(self) -> bool:
        """True iff eos strictly beats every token (ties do not fire)."""
        return self.probs[-1] > max(self.probs[:-1])


@dataclass(frozen=True)
class ScorerRequest:
    """Teacher-forced query: segment, direction, already-consumed prefix."""

    segment_id: str
    direction: Direction
    prefix: tuple[int, ...]


class PosteriorScorer(Protocol):
    def next_posterior(self, req: ScorerRequest) -> PosteriorRow: ...


def vocab_digest(vocab: Vocabulary) -> str:
    """Stable sha256 over the ordered token list; eos is implied by size."""
    blob = json.dumps(list(vocab.tokens), ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def expand_sparse_row(
    listed: Mapping[str, float],
    other_mass: float,
    vocab_size: int,
) -> PosteriorRow:
    """Expand a sparse top-K row into a dense PosteriorRow.

    Keys are decimal token ids or the literal "eos". The eos entry must be
    listed explicitly; ``other_mass`` spreads uniformly over unlisted
    non-eos token ids only.
    """
    dense = [0.0] * (vocab_size + 1)
    seen: set[int] = set()
    has_eos = False
    for key, value in listed.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ProtocolError(f"probability for {key!r} is not a number")
        if key == "eos":
            dense[vocab_size] = float(value)
            has_eos = True
            continue
        try:
            token_id = int(key)
        except ValueError:
            raise ProtocolError(f"bad token key in row: {key!r}") from None
        if not 0 <= token_id < vocab_size:
            raise ProtocolError(f"token id {token_id} outside vocabulary of size {vocab_size}")
        if token_id in seen:
            raise ProtocolError(f"token id {token_id} listed twice in row")
        seen.add(token_id)
        dense[token_id] = float(value)
    if not has_eos:
        raise ProtocolError("row must cover vocab plus eos: missing explicit eos entry")
    if other_mass < -ROW_SUM_TOLERANCE:
        raise ProtocolError(f"negative remainder mass: {other_mass}")
    unlisted = vocab_size - len(seen)
    if other_mass > ROW_SUM_TOLERANCE and unlisted == 0:
        raise ProtocolError("remainder mass given but every token id is listed")
    if unlisted > 0 and other_mass > 0.0:
        share = other_mass / unlisted
        for token_id in range(vocab_size):
            if token_id not in seen:
                dense[token_id] = share
    try:
        return PosteriorRow(tuple(dense))
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None


class ScriptedScorer:
    """In-memory scorer answering a fixed table of (segment, direction, prefix) rows.

    Unscripted requests raise UnknownKey in strict mode (default) or return
    the configured default row.
    """

    def __init__(
        self,
        rows: Mapping[tuple[str, Direction, tuple[int, ...]], PosteriorRow],
        vocab_size: int,
        default_row: PosteriorRow | None = None,
    ) -> None:
        self._rows = dict(rows)
        self._vocab_size = vocab_size
        self._default_row = default_row
        for row in self._rows.values():
            if row.vocab_size != vocab_size:
                raise ProtocolError(
                    f"scripted row has vocab size {row.vocab_size}, expected {vocab_size}"
                )

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def next_posterior(self, req: ScorerRequest) -> PosteriorRow:
        key = (req.segment_id, req.direction, tuple(req.prefix))
        row = self._rows.get(key)
        if row is not None:
            return row
        if self._default_row is not None:
            return self._default_row
        if not any(k[0] == req.segment_id for k in self._rows):
            raise UnknownSegment(f"no scripted rows for segment {req.segment_id!r}")
        raise UnknownKey(
            f"no scripted row for segment={req.segment_id} direction={req.direction.value} "
            f"prefix={list(req.prefix)}"
        )


def load_scripted_scorer(
    path: str | Path,
    vocab_size: int,
    *,
    default_row: PosteriorRow | None = None,
) -> ScriptedScorer:
    """Parse a scripted-scorer TSV file.

    Line format: ``segment_id<TAB>direction<TAB>space-joined-prefix-ids<TAB>
    token:prob,token:prob,...`` where token is a decimal id or "eos" (eos
    required). Comment lines start with '#'; the prefix column may be empty.
    Unlisted token mass is the remainder, spread uniformly.
    """
    rows: dict[tuple[str, Direction, tuple[int, ...]], PosteriorRow] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ProtocolError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        segment_id, direction_s, prefix_s, probs_s = fields
        try:
            direction = Direction.parse(direction_s)
        except ProtocolError as exc:
            raise ProtocolError(f"{path}:{lineno}: {exc}") from None
        try:
            prefix = tuple(int(p) for p in prefix_s.split()) if prefix_s.strip() else ()
        except ValueError:
            raise ProtocolError(f"{path}:{lineno}: bad prefix ids {prefix_s!r}") from None
        listed: dict[str, float] = {}
        for part in probs_s.split(","):
            part = part.strip()
            if not part:
                continue
            token, _, prob_s = part.rpartition(":")
            if not token:
                raise ProtocolError(f"{path}:{lineno}: bad token:prob entry {part!r}")
            try:
                prob = float(prob_s)
            except ValueError:
                raise ProtocolError(f"{path}:{lineno}: bad probability {prob_s!r}") from None
            if token in listed:
                raise ProtocolError(f"{path}:{lineno}: token {token!r} listed twice")
            listed[token] = prob
        remainder = 1.0 - sum(listed.values())
        if remainder < -ROW_SUM_TOLERANCE:
            raise ProtocolError(f"{path}:{lineno}: listed probabilities exceed 1")
        try:
            row = expand_sparse_row(listed, max(remainder, 0.0), vocab_size)
        except ProtocolError as exc:
            raise ProtocolError(f"{path}:{lineno}: {exc}") from None
        key = (segment_id, direction, prefix)
        if key in rows:
            raise DuplicateKey(
                f"{path}:{lineno}: duplicate scripted key segment={segment_id} "
                f"direction={direction.value} prefix={list(prefix)}"
            )
        rows[key] = row
    return ScriptedScorer(rows, vocab_size, default_row=default_row)


def dump_scripted_rows(
    rows: Mapping[tuple[str, Direction, tuple[int, ...]], PosteriorRow],
    path: str | Path,
) -> None:
    """Write rows in the scripted-scorer TSV format (full, not sparse)."""
    lines = []
    for (segment_id, direction, prefix), row in rows.items():
        prefix_s = " ".join(str(p) for p in prefix)
        entries = [f"{i}:{row.probs[i]!r}" for i in range(row.vocab_size) if row.probs[i] > 0.0]
        entries.append(f"eos:{row.eos_mass!r}")
        lines.append("\t".join([segment_id, direction.value, prefix_s, ",".join(entries)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
